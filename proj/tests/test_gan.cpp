#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "flowhunter/gan.hpp"
#include "flowhunter/gradcheck.hpp"
#include "flowhunter/rng.hpp"

using namespace flowhunter;

namespace {

GanConfig tiny_cfg() {
    GanConfig cfg;
    cfg.latent_dim = 3;
    cfg.gen_hidden = {8};
    cfg.disc_hidden = {8};
    cfg.steps = 40;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.seed = 7;
    return cfg;
}

Tensor gaussian_rows(std::int64_t n, int d, double mean, double stddev, std::uint64_t seed) {
    SeededRng rng(seed);
    std::vector<double> v(static_cast<std::size_t>(n * d));
    for (auto& x : v) x = rng.normal(mean, stddev);
    return Tensor::from({n, d}, std::move(v));
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor>& ps) {
    std::vector<std::vector<double>> s;
    for (const auto& p : ps) s.push_back(p.values());
    return s;
}

bool equal_snapshot(const std::vector<std::vector<double>>& a, const std::vector<Tensor>& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (a[i] != ps[i].values()) return false;
    }
    return true;
}

} // namespace

TEST_CASE("init_gan builds the configured layer stack") {
    GanConfig cfg; // defaults: latent 32, gen 64/64, disc 64/32
    SeededRng rng(1);
    GanPair pair = init_gan(cfg, 95, rng);

    REQUIRE(pair.gen.w.size() == 3);
    CHECK(pair.gen.w[0].shape() == Shape{32, 64});
    CHECK(pair.gen.w[1].shape() == Shape{64, 64});
    CHECK(pair.gen.w[2].shape() == Shape{64, 95});
    REQUIRE(pair.disc.w.size() == 3);
    CHECK(pair.disc.w[0].shape() == Shape{95, 64});
    CHECK(pair.disc.w[1].shape() == Shape{64, 32});
    CHECK(pair.disc.w[2].shape() == Shape{32, 1});

    Tape t(false);
    Tensor z = sample_noise(cfg, 5, rng);
    Tensor rows = gen_forward(t, pair, z);
    CHECK(rows.shape() == Shape{5, 95});
    Tensor scores = disc_forward(t, pair, rows);
    REQUIRE(scores.shape() == Shape{5, 1});
    for (int i = 0; i < 5; ++i) {
        CHECK(scores.at(i, 0) > 0.0);
        CHECK(scores.at(i, 0) < 1.0);
    }
}

TEST_CASE("gan loss gradients match finite differences through both networks") {
    GanConfig cfg = tiny_cfg();
    SeededRng rng(5);
    GanPair pair = init_gan(cfg, 4, rng);
    Tensor real = gaussian_rows(6, 4, 0.5, 1.0, 50);
    Tensor z = sample_noise(cfg, 6, rng);

    SECTION("discriminator loss wrt discriminator parameters") {
        auto res = check_gradients(
            [&](Tape& t) {
                Tensor fake = detach(gen_forward(t, pair, z));
                return t.gan_disc_loss(disc_forward(t, pair, real), disc_forward(t, pair, fake));
            },
            pair.disc.params());
        INFO("worst " << res.worst.param << " rel " << res.max_rel_err);
        CHECK(res.pass(1e-4));
    }

    SECTION("generator loss wrt generator parameters, through the discriminator") {
        auto res = check_gradients(
            [&](Tape& t) {
                return t.gan_gen_loss(disc_forward(t, pair, gen_forward(t, pair, z)));
            },
            pair.gen.params());
        INFO("worst " << res.worst.param << " rel " << res.max_rel_err);
        CHECK(res.pass(1e-4));
    }
}

TEST_CASE("detached fakes leave the generator without gradients") {
    GanConfig cfg = tiny_cfg();
    SeededRng rng(6);
    GanPair pair = init_gan(cfg, 4, rng);
    Tensor real = gaussian_rows(8, 4, 0.0, 1.0, 51);
    Tensor z = sample_noise(cfg, 8, rng);

    Tape t;
    Tensor fake = detach(gen_forward(t, pair, z));
    Tensor loss = t.gan_disc_loss(disc_forward(t, pair, real), disc_forward(t, pair, fake));
    t.backward(loss);

    for (const auto& p : pair.gen.params()) {
        const auto* g = p.grad_if();
        if (!g) continue;
        for (double v : *g) CHECK(v == 0.0);
    }
    bool disc_has_grad = false;
    for (const auto& p : pair.disc.params()) {
        const auto* g = p.grad_if();
        if (!g) continue;
        for (double v : *g) disc_has_grad = disc_has_grad || v != 0.0;
    }
    CHECK(disc_has_grad);
}

TEST_CASE("generator step does not move discriminator weights, and vice versa") {
    GanConfig cfg = tiny_cfg();
    SeededRng rng(8);
    GanPair pair = init_gan(cfg, 4, rng);
    Tensor real = gaussian_rows(20, 4, 1.0, 0.5, 52);

    AdamConfig acfg;
    acfg.lr = cfg.learning_rate;
    Adam opt_d(pair.disc.params(), acfg);
    Adam opt_g(pair.gen.params(), acfg);

    // Generator step only.
    const auto disc_before = snapshot(pair.disc.params());
    const auto gen_before = snapshot(pair.gen.params());
    {
        for (const auto& p : pair.disc.params()) p.zero_grad();
        for (const auto& p : pair.gen.params()) p.zero_grad();
        Tape t;
        Tensor z = sample_noise(cfg, 16, rng);
        Tensor loss = t.gan_gen_loss(disc_forward(t, pair, gen_forward(t, pair, z)));
        t.backward(loss);
        // Coupled gradient: the discriminator received real gradient signal...
        bool disc_grad = false;
        for (const auto& p : pair.disc.params()) {
            if (const auto* g = p.grad_if()) {
                for (double v : *g) disc_grad = disc_grad || v != 0.0;
            }
        }
        CHECK(disc_grad);
        opt_g.step();
    }
    // ...but its weights did not move.
    CHECK(equal_snapshot(disc_before, pair.disc.params()));
    CHECK_FALSE(equal_snapshot(gen_before, pair.gen.params()));

    // Discriminator step only.
    const auto gen_mid = snapshot(pair.gen.params());
    {
        for (const auto& p : pair.disc.params()) p.zero_grad();
        for (const auto& p : pair.gen.params()) p.zero_grad();
        Tape t;
        Tensor z = sample_noise(cfg, 16, rng);
        Tensor fake = detach(gen_forward(t, pair, z));
        Tensor loss = t.gan_disc_loss(disc_forward(t, pair, real), disc_forward(t, pair, fake));
        t.backward(loss);
        opt_d.step();
    }
    CHECK(equal_snapshot(gen_mid, pair.gen.params()));
    CHECK_FALSE(equal_snapshot(disc_before, pair.disc.params()));
}

TEST_CASE("train_gan is reproducible and fits a shifted gaussian quickly") {
    GanConfig cfg;
    cfg.latent_dim = 4;
    cfg.gen_hidden = {16};
    cfg.disc_hidden = {16};
    cfg.steps = 600;
    cfg.batch_size = 32;
    cfg.learning_rate = 2e-3;
    cfg.seed = 7;

    Tensor real = gaussian_rows(512, 1, 3.0, 1.0, 99);

    auto run = [&]() {
        SeededRng rng(cfg.seed);
        GanPair pair = init_gan(cfg, 1, rng);
        GanHistory hist = train_gan(pair, real, cfg, rng);
        Tensor sample = synthesize(pair, 400, cfg, rng);
        double mean = 0.0;
        for (std::int64_t i = 0; i < sample.size(); ++i) mean += sample.data()[i];
        mean /= static_cast<double>(sample.size());
        return std::make_pair(mean, hist);
    };

    const auto [mean1, hist1] = run();
    const auto [mean2, hist2] = run();
    CHECK(mean1 == mean2);
    REQUIRE(hist1.d_loss.size() == hist1.g_loss.size());
    REQUIRE(hist1.d_loss.size() == 600);
    for (std::size_t i = 0; i < hist1.d_loss.size(); ++i) {
        CHECK(hist1.d_loss[i] == hist2.d_loss[i]);
        CHECK(hist1.g_loss[i] == hist2.g_loss[i]);
    }
    CHECK(std::fabs(mean1 - 3.0) < 0.5);
}

TEST_CASE("augment_dataset hits targets, flags rows and refuses thin classes") {
    SeededRng rng(123);
    LabeledDataset ds;
    ds.codec = LabelCodec({"big", "mid", "thin"});
    ds.n_features = 4;
    auto add_rows = [&](int cls, int count, double mean) {
        for (int i = 0; i < count; ++i) {
            for (int j = 0; j < 4; ++j) ds.X.push_back(mean + 0.2 * rng.normal());
            ds.y.push_back(cls);
            ds.synthetic.push_back(0);
            ++ds.n_rows;
        }
    };
    add_rows(0, 120, 0.0);
    add_rows(1, 60, 2.0);
    add_rows(2, 30, -2.0);
    ds.validate();

    GanConfig cfg = tiny_cfg();
    cfg.steps = 30;

    std::map<int, std::int64_t> targets = {{1, 90}, {2, 80}, {0, 100}};
    AugmentReport report;
    LabeledDataset out = augment_dataset(ds, targets, cfg, &report);

    // Exact counts: class 0 already above target, class 1 topped up, class 2 refused.
    const auto counts = out.class_counts();
    CHECK(counts[0] == 120);
    CHECK(counts[1] == 90);
    CHECK(counts[2] == 30);
    CHECK(out.n_rows == 240);

    REQUIRE(report.classes.size() == 3);
    CHECK(report.classes[0].class_index == 0);
    CHECK(report.classes[0].generated == 0);
    CHECK_FALSE(report.classes[0].refused);
    CHECK(report.classes[1].generated == 30);
    CHECK(report.classes[2].refused);
    CHECK(report.classes[2].reason.find("30") != std::string::npos);
    CHECK(report.total_generated() == 30);

    // Original rows are untouched and synthetic rows are flagged.
    for (std::int64_t i = 0; i < ds.n_rows * ds.n_features; ++i) {
        REQUIRE(out.X[static_cast<std::size_t>(i)] == ds.X[static_cast<std::size_t>(i)]);
    }
    for (std::int64_t i = 0; i < ds.n_rows; ++i) {
        CHECK(out.synthetic[static_cast<std::size_t>(i)] == 0);
    }
    for (std::int64_t i = ds.n_rows; i < out.n_rows; ++i) {
        CHECK(out.synthetic[static_cast<std::size_t>(i)] == 1);
        CHECK(out.y[static_cast<std::size_t>(i)] == 1);
    }

    // Determinism: the same call yields identical bytes.
    LabeledDataset out2 = augment_dataset(ds, targets, cfg, nullptr);
    CHECK(out2.X == out.X);
    CHECK(out2.y == out.y);
    CHECK(out2.synthetic == out.synthetic);

    // Invalid targets are rejected.
    CHECK_THROWS_AS(augment_dataset(ds, {{3, 10}}, cfg, nullptr), DataError);
    CHECK_THROWS_AS(augment_dataset(ds, {{0, -1}}, cfg, nullptr), DataError);
}

TEST_CASE("synthesized rows for a class come from that class's own gan seed") {
    SeededRng rng(321);
    LabeledDataset ds;
    ds.codec = LabelCodec({"a", "b"});
    ds.n_features = 2;
    for (int cls = 0; cls < 2; ++cls) {
        for (int i = 0; i < 70; ++i) {
            ds.X.push_back(cls == 0 ? 1.0 + 0.1 * rng.normal() : -1.0 + 0.1 * rng.normal());
            ds.X.push_back(cls == 0 ? 1.0 + 0.1 * rng.normal() : -1.0 + 0.1 * rng.normal());
            ds.y.push_back(cls);
            ds.synthetic.push_back(0);
            ++ds.n_rows;
        }
    }
    GanConfig cfg = tiny_cfg();
    cfg.steps = 200;
    cfg.learning_rate = 2e-3;

    LabeledDataset out = augment_dataset(ds, {{0, 100}, {1, 100}}, cfg, nullptr);
    // Both classes were topped up by 30 rows each, appended in class order.
    REQUIRE(out.n_rows == 200);
    double mean_a = 0.0, mean_b = 0.0;
    for (std::int64_t i = 140; i < 170; ++i) {
        mean_a += out.X[static_cast<std::size_t>(i * 2)] / 30.0;
        CHECK(out.y[static_cast<std::size_t>(i)] == 0);
    }
    for (std::int64_t i = 170; i < 200; ++i) {
        mean_b += out.X[static_cast<std::size_t>(i * 2)] / 30.0;
        CHECK(out.y[static_cast<std::size_t>(i)] == 1);
    }
    // Rough fidelity: synthetic rows trend toward their class's real mean.
    CHECK(mean_a > mean_b);
}
