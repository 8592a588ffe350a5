#pragma once

// Central finite-difference gradient verification. The loss function must be
// a deterministic pure function of the checked parameters (no dropout, no RNG
// use inside), because it is re-evaluated under perturbation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace flowhunter {

struct GradCheckEntry {
    std::string param;
    std::int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    GradCheckEntry worst;
    std::int64_t checked = 0;

    bool pass(double tol) const { return max_rel_err < tol; }
};

// |a - n| / max(1, |a|, |n|): relative above magnitude 1, absolute below, so
// masked zero gradients compare cleanly against finite-difference noise.
inline double gradcheck_rel_err(double analytic, double numeric) {
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    return std::fabs(analytic - numeric) / denom;
}

// loss_fn builds the graph on the given tape and returns a scalar loss.
// Analytic gradients come from one backward pass; numeric ones from central
// differences with step h on every element of every listed parameter.
inline GradCheckResult check_gradients(const std::function<Tensor(Tape&)>& loss_fn,
                                       const std::vector<Tensor>& params, double h = 1e-5) {
    if (!(h > 0.0)) throw TensorError("gradcheck: step must be positive");

    for (const auto& p : params) (void)p.size(); // forces defined-tensor check up front

    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss = loss_fn(tape);
        tape.backward(loss);
        for (auto p : params) {
            const auto* g = p.grad_if();
            analytic.push_back(g ? *g : std::vector<double>(static_cast<std::size_t>(p.size()), 0.0));
            p.clear_grad();
        }
    }

    const auto eval = [&]() {
        Tape tape(false);
        Tensor loss = loss_fn(tape);
        if (loss.size() != 1) throw TensorError("gradcheck: loss must be scalar");
        return loss.at(0);
    };

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        for (std::int64_t j = 0; j < p.size(); ++j) {
            const double saved = p.data()[j];
            p.data()[j] = saved + h;
            const double up = eval();
            p.data()[j] = saved - h;
            const double down = eval();
            p.data()[j] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][static_cast<std::size_t>(j)];
            const double err = gradcheck_rel_err(a, numeric);
            ++result.checked;
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst.param = p.name().empty() ? ("param#" + std::to_string(pi)) : p.name();
                result.worst.index = j;
                result.worst.analytic = a;
                result.worst.numeric = numeric;
                result.worst.rel_err = err;
            }
        }
    }
    return result;
}

} // namespace flowhunter
