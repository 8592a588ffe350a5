#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "flowhunter/adam.hpp"
#include "flowhunter/rng.hpp"
#include "flowhunter/tape.hpp"
#include "flowhunter/tensor.hpp"

using namespace flowhunter;

TEST_CASE("first Adam step moves a unit-gradient parameter by about lr") {
    Tensor w = Tensor::from({1}, {1.0}).set_name("w");
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({w}, cfg);
    w.grad()[0] = 1.0;
    opt.step();
    // mhat = 1, vhat = 1 -> delta = lr / (1 + eps)
    CHECK(w.at(0) == Catch::Approx(1.0 - 0.1).margin(1e-8));
    CHECK(opt.steps() == 1);
}

TEST_CASE("zero gradient with fresh state leaves the parameter unchanged") {
    Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5});
    Adam opt({w}, AdamConfig{});
    w.grad(); // allocate zeros
    opt.step();
    CHECK(w.at(0) == 1.0);
    CHECK(w.at(1) == -2.0);
    CHECK(w.at(2) == 0.5);
}

TEST_CASE("missing gradient is an error that names the parameter") {
    Tensor a = Tensor::from({1}, {1.0}).set_name("weights.w1");
    Tensor b = Tensor::from({1}, {2.0}).set_name("weights.w2");
    Adam opt({a, b}, AdamConfig{});
    a.grad()[0] = 0.5;
    try {
        opt.step();
        FAIL("expected TensorError");
    } catch (const TensorError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("weights.w2") != std::string::npos);
        CHECK(msg.find("#1") != std::string::npos);
    }
    // The failed step must not have moved or consumed anything.
    CHECK(a.at(0) == 1.0);
    CHECK(opt.steps() == 0);
}

TEST_CASE("gradients are zeroed after a step") {
    Tensor w = Tensor::from({2}, {1.0, 2.0});
    Adam opt({w}, AdamConfig{});
    w.grad()[0] = 3.0;
    w.grad()[1] = -4.0;
    opt.step();
    CHECK((*w.grad_if())[0] == 0.0);
    CHECK((*w.grad_if())[1] == 0.0);
}

TEST_CASE("Adam drives a quadratic to its minimum") {
    // f(w) = (w - 2)^2, df/dw = 2(w - 2)
    Tensor w = Tensor::from({1}, {-3.0});
    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam opt({w}, cfg);
    for (int i = 0; i < 500; ++i) {
        w.grad()[0] = 2.0 * (w.at(0) - 2.0);
        opt.step();
    }
    CHECK(std::fabs(w.at(0) - 2.0) < 0.05);
}

TEST_CASE("Adam trajectories are bit-identical across runs") {
    auto run = [](int steps) {
        SeededRng rng(31);
        std::vector<double> init(8);
        for (auto& x : init) x = rng.normal();
        Tensor w = Tensor::from({8}, init);
        AdamConfig cfg;
        cfg.lr = 1e-2;
        Adam opt({w}, cfg);
        for (int i = 0; i < steps; ++i) {
            auto& g = w.grad();
            for (int j = 0; j < 8; ++j) g[static_cast<std::size_t>(j)] = std::sin(w.at(j) + i);
            opt.step();
        }
        return w.values();
    };
    const auto w1 = run(200), w2 = run(200);
    for (int j = 0; j < 8; ++j) CHECK(w1[static_cast<std::size_t>(j)] == w2[static_cast<std::size_t>(j)]);
}

TEST_CASE("Adam integrates with the tape on a least-squares fit") {
    SeededRng rng(17);
    std::vector<double> xv(40), yv(10);
    for (auto& v : xv) v = rng.normal();
    Tensor X = Tensor::from({10, 4}, xv);
    std::vector<double> true_w = {1.5, -2.0, 0.5, 3.0};
    for (int i = 0; i < 10; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += X.at(i, j) * true_w[static_cast<std::size_t>(j)];
        yv[static_cast<std::size_t>(i)] = s;
    }
    Tensor y = Tensor::from({10, 1}, yv);
    Tensor w = Tensor::zeros({4, 1});

    AdamConfig cfg;
    cfg.lr = 0.05;
    Adam opt({w}, cfg);
    double loss_val = 0.0;
    for (int it = 0; it < 800; ++it) {
        Tape t;
        Tensor r = t.sub(t.matmul(X, w), y);
        Tensor loss = t.mean(t.mul(r, r));
        loss_val = loss.at(0);
        t.backward(loss);
        opt.step();
    }
    CHECK(loss_val < 1e-4);
    for (int j = 0; j < 4; ++j) {
        CHECK(w.at(j, 0) == Catch::Approx(true_w[static_cast<std::size_t>(j)]).margin(0.02));
    }
}
