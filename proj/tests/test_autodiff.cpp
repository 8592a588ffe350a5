#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "flowhunter/gradcheck.hpp"
#include "flowhunter/rng.hpp"
#include "flowhunter/tape.hpp"
#include "flowhunter/tensor.hpp"

using namespace flowhunter;

namespace {

Tensor random_tensor(Shape shape, SeededRng& rng, double scale = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = scale * rng.normal();
    return Tensor::from(std::move(shape), std::move(v));
}

// Random fixed coefficients turn any op output into a scalar whose gradient
// exercises every output element with a distinct weight.
Tensor coeffs_like(const Tensor& t, SeededRng& rng) {
    return random_tensor(t.shape(), rng, 1.0);
}

} // namespace

TEST_CASE("frozen gradients: matmul, relu") {
    Tape t;
    Tensor a = Tensor::from({1, 2}, {1, 2}).set_name("a");
    Tensor b = Tensor::from({2, 1}, {3, 4}).set_name("b");
    Tensor c = t.matmul(a, b);
    t.backward(t.sum(c));
    CHECK((*a.grad_if())[0] == 3.0);
    CHECK((*a.grad_if())[1] == 4.0);
    CHECK((*b.grad_if())[0] == 1.0);
    CHECK((*b.grad_if())[1] == 2.0);

    Tape t2;
    Tensor x = Tensor::from({2}, {-1.0, 2.0});
    Tensor y = t2.relu(x);
    t2.backward(t2.sum(y));
    CHECK((*x.grad_if())[0] == 0.0);
    CHECK((*x.grad_if())[1] == 1.0);

    // Subgradient at exactly zero is zero.
    Tape t3;
    Tensor z = Tensor::from({1}, {0.0});
    Tensor yz = t3.relu(z);
    t3.backward(t3.sum(yz));
    CHECK((*z.grad_if())[0] == 0.0);
}

TEST_CASE("finite differences confirm every op backward") {
    SeededRng rng(1001);

    SECTION("matmul 2x2") {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor w = random_tensor({2, 4}, rng);
        auto res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.matmul(a, b), w)); }, {a, b});
        INFO(res.worst.param << "[" << res.worst.index << "] analytic " << res.worst.analytic
                             << " numeric " << res.worst.numeric);
        CHECK(res.pass(1e-4));
    }

    SECTION("matmul batched and shared-right") {
        Tensor a = random_tensor({2, 3, 4}, rng);
        Tensor b = random_tensor({2, 4, 5}, rng);
        Tensor w = random_tensor({2, 3, 5}, rng);
        auto res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.matmul(a, b), w)); }, {a, b});
        CHECK(res.pass(1e-4));

        Tensor m = random_tensor({4, 5}, rng);
        Tensor w2 = random_tensor({2, 3, 5}, rng);
        auto res2 = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.matmul(a, m), w2)); }, {a, m});
        CHECK(res2.pass(1e-4));
    }

    SECTION("matmul_nt plain and batched") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({5, 4}, rng);
        Tensor w = random_tensor({3, 5}, rng);
        auto res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.matmul_nt(a, b), w)); }, {a, b});
        CHECK(res.pass(1e-4));

        Tensor a3 = random_tensor({2, 3, 4}, rng);
        Tensor b3 = random_tensor({2, 5, 4}, rng);
        Tensor w3 = random_tensor({2, 3, 5}, rng);
        auto res3 = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.matmul_nt(a3, b3), w3)); }, {a3, b3});
        CHECK(res3.pass(1e-4));
    }

    SECTION("elementwise and bias") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor bias = random_tensor({4}, rng);
        Tensor w = random_tensor({3, 4}, rng);
        auto res = check_gradients(
            [&](Tape& t) {
                Tensor s = t.add(t.mul(a, b), t.scale(t.sub(a, b), 0.5));
                return t.sum(t.mul(t.add_rowvec(s, bias), w));
            },
            {a, b, bias});
        CHECK(res.pass(1e-4));

        Tensor x3 = random_tensor({2, 3, 4}, rng);
        Tensor w3 = coeffs_like(x3, rng);
        auto res3 = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.add_rowvec(x3, bias), w3)); }, {x3, bias});
        CHECK(res3.pass(1e-4));
    }

    SECTION("activations") {
        // Offset away from zero so the relu kink cannot sit inside the
        // finite-difference window.
        std::vector<double> v(12);
        for (auto& x : v) {
            x = rng.normal();
            if (std::fabs(x) < 0.01) x = 0.05;
        }
        Tensor a = Tensor::from({3, 4}, v);
        Tensor w = random_tensor({3, 4}, rng);
        auto relu_res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.relu(a), w)); }, {a});
        CHECK(relu_res.pass(1e-4));

        auto leaky_res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.leaky_relu(a, 0.2), w)); }, {a});
        CHECK(leaky_res.pass(1e-4));

        auto sig_res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.sigmoid(a), w)); }, {a});
        CHECK(sig_res.pass(1e-4));
    }

    SECTION("softmax rows") {
        Tensor a = random_tensor({4, 6}, rng);
        Tensor w = random_tensor({4, 6}, rng);
        auto res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.softmax_rows(a), w)); }, {a});
        CHECK(res.pass(1e-4));
    }

    SECTION("layer norm, rank 2 and rank 3, with and without eps") {
        Tensor x = random_tensor({5, 3}, rng);
        Tensor gain = random_tensor({3}, rng);
        Tensor bias = random_tensor({3}, rng);
        Tensor w = random_tensor({5, 3}, rng);
        auto res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.layer_norm_seq(x, gain, bias, 1e-6), w)); },
            {x, gain, bias});
        CHECK(res.pass(1e-4));

        Tensor x3 = random_tensor({2, 5, 3}, rng);
        Tensor w3 = random_tensor({2, 5, 3}, rng);
        auto res3 = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.layer_norm_seq(x3, gain, bias, 0.0), w3)); },
            {x3, gain, bias});
        CHECK(res3.pass(1e-4));
    }

    SECTION("pooling, concat, reshape") {
        Tensor x = random_tensor({2, 4, 3}, rng);
        Tensor w = random_tensor({2, 3}, rng);
        auto res = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.mean_positions(x), w)); }, {x});
        CHECK(res.pass(1e-4));

        Tensor a = random_tensor({3, 2}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        Tensor wc = random_tensor({3, 6}, rng);
        auto resc = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.concat_cols({a, b}), wc)); }, {a, b});
        CHECK(resc.pass(1e-4));

        Tensor wr = random_tensor({6, 1}, rng);
        auto resr = check_gradients(
            [&](Tape& t) { return t.sum(t.mul(t.reshape(a, {6, 1}), wr)); }, {a});
        CHECK(resr.pass(1e-4));
    }

    SECTION("mean and losses") {
        std::vector<double> pv = {0.2, 0.3, 0.5, 0.6, 0.3, 0.1};
        Tensor probs = Tensor::from({2, 3}, pv);
        auto res = check_gradients(
            [&](Tape& t) { return t.cross_entropy(probs, {2, 0}); }, {probs});
        CHECK(res.pass(1e-4));

        Tensor dr = Tensor::from({3}, {0.3, 0.6, 0.8});
        Tensor df = Tensor::from({3}, {0.2, 0.5, 0.7});
        auto resd = check_gradients(
            [&](Tape& t) { return t.gan_disc_loss(dr, df); }, {dr, df});
        CHECK(resd.pass(1e-4));
        auto resg = check_gradients(
            [&](Tape& t) { return t.gan_gen_loss(df); }, {df});
        CHECK(resg.pass(1e-4));

        Tensor m = random_tensor({4, 4}, rng);
        auto resm = check_gradients([&](Tape& t) { return t.mean(m); }, {m});
        CHECK(resm.pass(1e-4));
    }

    SECTION("dropout backward routes gradient through the mask") {
        Tensor x = random_tensor({2, 8}, rng);
        Tensor w = random_tensor({2, 8}, rng);
        SeededRng mask_rng(77);
        Tape t;
        Tensor y = t.dropout(x, 0.5, mask_rng);
        t.backward(t.sum(t.mul(y, w)));
        for (int j = 0; j < 16; ++j) {
            const double expected = y.data()[j] == 0.0 ? 0.0 : 2.0 * w.data()[j];
            CHECK((*x.grad_if())[j] == Catch::Approx(expected).margin(1e-12));
        }
    }

    SECTION("composite chain through sigmoid, matmul and cross entropy") {
        Tensor x = random_tensor({4, 3}, rng);
        Tensor w1 = random_tensor({3, 5}, rng, 0.5);
        Tensor b1 = random_tensor({5}, rng, 0.1);
        Tensor w2 = random_tensor({5, 3}, rng, 0.5);
        std::vector<int> labels = {0, 2, 1, 1};
        auto res = check_gradients(
            [&](Tape& t) {
                Tensor h = t.sigmoid(t.add_rowvec(t.matmul(x, w1), b1));
                Tensor p = t.softmax_rows(t.matmul(h, w2));
                return t.cross_entropy(p, labels);
            },
            {x, w1, b1, w2});
        CHECK(res.pass(1e-4));
    }
}

TEST_CASE("the finite-difference oracle rejects a corrupted gradient") {
    SeededRng rng(55);
    Tensor x = random_tensor({4}, rng);
    Tape t;
    Tensor y = t.mul(x, x);
    t.backward(t.sum(y));
    const auto grad = *x.grad_if();

    // Numeric oracle for d/dx sum(x*x) = 2x, computed independently.
    for (int j = 0; j < 4; ++j) {
        const double h = 1e-5;
        const double saved = x.data()[j];
        auto f = [&]() {
            double s = 0.0;
            for (int i = 0; i < 4; ++i) s += x.data()[i] * x.data()[i];
            return s;
        };
        x.data()[j] = saved + h;
        const double up = f();
        x.data()[j] = saved - h;
        const double down = f();
        x.data()[j] = saved;
        const double numeric = (up - down) / (2 * h);
        CHECK(gradcheck_rel_err(grad[j], numeric) < 1e-6);
        // A 1.5x corrupted analytic value must be flagged at the same tolerance.
        CHECK(gradcheck_rel_err(1.5 * grad[j], numeric) > 1e-3);
    }
}

TEST_CASE("gradient accumulates once per operand use") {
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0});
    Tape t;
    Tensor y = t.add(x, x);
    t.backward(t.sum(y));
    for (int j = 0; j < 3; ++j) CHECK((*x.grad_if())[j] == 2.0);

    Tensor z = Tensor::from({3}, {1.0, 2.0, 3.0});
    Tape t2;
    Tensor out = t2.add(t2.mul(z, z), z); // d/dz (z^2 + z) = 2z + 1
    t2.backward(t2.sum(out));
    for (int j = 0; j < 3; ++j) {
        CHECK((*z.grad_if())[j] == Catch::Approx(2.0 * z.at(j) + 1.0).margin(1e-12));
    }
}

TEST_CASE("detach blocks gradient flow structurally") {
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0});
    Tape t;
    Tensor frozen = detach(x);
    Tensor y = t.mul(frozen, x); // only the second factor sees gradient
    t.backward(t.sum(y));
    for (int j = 0; j < 3; ++j) CHECK((*x.grad_if())[j] == x.at(j));
    CHECK(frozen.has_grad()); // the leaf got a gradient of its own
    CHECK_FALSE(frozen.same_storage(x));
}

TEST_CASE("tape misuse is rejected") {
    Tensor x = Tensor::from({2}, {1.0, 2.0});
    Tape t;
    Tensor y = t.mul(x, x);
    Tensor loss = t.sum(y);

    SECTION("non-scalar loss") {
        CHECK_THROWS_AS(t.backward(y), TapeError);
    }

    SECTION("loss not produced by this tape") {
        CHECK_THROWS_AS(t.backward(Tensor::scalar(1.0)), TapeError);
        Tape other;
        Tensor other_loss = other.sum(x);
        CHECK_THROWS_AS(t.backward(other_loss), TapeError);
    }

    SECTION("repeated backward without reset") {
        t.backward(loss);
        CHECK_THROWS_AS(t.backward(loss), TapeError);
        t.reset();
        Tensor y2 = t.mul(x, x);
        CHECK_NOTHROW(t.backward(t.sum(y2)));
    }
}

TEST_CASE("unused branches receive no gradient") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tape t;
    (void)t.matmul(a, b); // recorded but not part of the loss
    Tensor loss = t.sum(a);
    t.backward(loss);
    CHECK(a.has_grad());
    CHECK(b.grad_if() == nullptr);
}

TEST_CASE("backward is deterministic across identical runs") {
    auto run = [](std::uint64_t seed) {
        SeededRng rng(seed);
        Tensor x = random_tensor({4, 6}, rng);
        Tensor w = random_tensor({6, 3}, rng);
        Tape t;
        Tensor p = t.softmax_rows(t.matmul(x, w));
        t.backward(t.cross_entropy(p, {0, 1, 2, 0}));
        return *w.grad_if();
    };
    const auto g1 = run(99), g2 = run(99);
    REQUIRE(g1.size() == g2.size());
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
