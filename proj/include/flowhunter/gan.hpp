#pragma once

// Per-class GAN augmentation. Generator maps latent noise to rows in the
// standardized feature space; the discriminator scores rows with a sigmoid.
// Losses follow the minimax form with a non-saturating generator objective,
// trained with alternating 1:1 Adam updates.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adam.hpp"
#include "dataset.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"
#include "transformer.hpp"

namespace flowhunter {

struct GanConfig {
    int latent_dim = 32;
    std::vector<int> gen_hidden = {64, 64};
    std::vector<int> disc_hidden = {64, 32};
    double learning_rate = 1e-3;
    int steps = 2000;
    int batch_size = 64;
    std::uint64_t seed = 7;

    void validate() const {
        if (latent_dim <= 0) throw TensorError("gan config: latent_dim must be positive");
        if (gen_hidden.empty() || disc_hidden.empty()) {
            throw TensorError("gan config: hidden layer lists must be non-empty");
        }
        for (int u : gen_hidden) {
            if (u <= 0) throw TensorError("gan config: generator hidden sizes must be positive");
        }
        for (int u : disc_hidden) {
            if (u <= 0) throw TensorError("gan config: discriminator hidden sizes must be positive");
        }
        if (!(learning_rate > 0.0)) throw TensorError("gan config: learning rate must be positive");
        if (steps <= 0 || batch_size <= 0) {
            throw TensorError("gan config: steps and batch size must be positive");
        }
    }
};

struct Mlp {
    std::vector<Tensor> w, b;

    std::vector<Tensor> params() const {
        std::vector<Tensor> ps;
        for (std::size_t i = 0; i < w.size(); ++i) {
            ps.push_back(w[i]);
            ps.push_back(b[i]);
        }
        return ps;
    }
};

inline Mlp make_mlp(const std::vector<std::int64_t>& dims, SeededRng& rng,
                    const std::string& name) {
    Mlp mlp;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const std::string ln = name + ".layer" + std::to_string(i);
        mlp.w.push_back(glorot_uniform(dims[i], dims[i + 1], rng, ln + ".w"));
        Tensor b = Tensor::zeros({dims[i + 1]});
        b.set_name(ln + ".b");
        mlp.b.push_back(b);
    }
    return mlp;
}

struct GanPair {
    Mlp gen, disc;
    int latent_dim = 0;
    int feature_dim = 0;
};

// Generator: relu hidden layers, linear output (rows live in standardized
// space). Discriminator: leaky-relu(0.2) hidden layers, sigmoid output.
inline GanPair init_gan(const GanConfig& cfg, int feature_dim, SeededRng& rng) {
    cfg.validate();
    if (feature_dim <= 0) throw TensorError("init_gan: feature_dim must be positive");
    GanPair pair;
    pair.latent_dim = cfg.latent_dim;
    pair.feature_dim = feature_dim;

    std::vector<std::int64_t> gdims = {cfg.latent_dim};
    for (int u : cfg.gen_hidden) gdims.push_back(u);
    gdims.push_back(feature_dim);
    pair.gen = make_mlp(gdims, rng, "gen");

    std::vector<std::int64_t> ddims = {feature_dim};
    for (int u : cfg.disc_hidden) ddims.push_back(u);
    ddims.push_back(1);
    pair.disc = make_mlp(ddims, rng, "disc");
    return pair;
}

// [n, latent_dim] of standard normal draws, row-major order.
inline Tensor sample_noise(const GanConfig& cfg, std::int64_t n, SeededRng& rng) {
    std::vector<double> v(static_cast<std::size_t>(n * cfg.latent_dim));
    for (auto& x : v) x = rng.normal();
    return Tensor::from({n, static_cast<std::int64_t>(cfg.latent_dim)}, std::move(v));
}

inline Tensor gen_forward(Tape& tape, const GanPair& pair, const Tensor& z) {
    if (z.rank() != 2 || z.dim(1) != pair.latent_dim) {
        throw ShapeError("gen_forward: expected [n x " + std::to_string(pair.latent_dim) +
                         "], got " + shape_str(z.shape()));
    }
    Tensor h = z;
    for (std::size_t i = 0; i < pair.gen.w.size(); ++i) {
        h = tape.add_rowvec(tape.matmul(h, pair.gen.w[i]), pair.gen.b[i]);
        if (i + 1 < pair.gen.w.size()) h = tape.relu(h);
    }
    return h;
}

// Returns [n, 1] probabilities of "real".
inline Tensor disc_forward(Tape& tape, const GanPair& pair, const Tensor& x) {
    if (x.rank() != 2 || x.dim(1) != pair.feature_dim) {
        throw ShapeError("disc_forward: expected [n x " + std::to_string(pair.feature_dim) +
                         "], got " + shape_str(x.shape()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < pair.disc.w.size(); ++i) {
        h = tape.add_rowvec(tape.matmul(h, pair.disc.w[i]), pair.disc.b[i]);
        if (i + 1 < pair.disc.w.size()) {
            h = tape.leaky_relu(h, 0.2);
        } else {
            h = tape.sigmoid(h);
        }
    }
    return h;
}

struct GanHistory {
    std::vector<double> d_loss, g_loss;
};

namespace detail {

inline void zero_params(const std::vector<Tensor>& ps) {
    for (const auto& p : ps) p.zero_grad();
}

} // namespace detail

// Alternating 1:1 updates. Each step draws, in order: batch_size real-row
// indices (with replacement), one noise batch for the discriminator step,
// one noise batch for the generator step. The discriminator trains against
// detached fakes; the generator trains through the discriminator, whose
// weights the generator update does not touch.
inline GanHistory train_gan(GanPair& pair, const Tensor& real, const GanConfig& cfg,
                            SeededRng& rng) {
    cfg.validate();
    if (real.rank() != 2 || real.dim(1) != pair.feature_dim) {
        throw ShapeError("train_gan: real rows must be [n x " +
                         std::to_string(pair.feature_dim) + "], got " + shape_str(real.shape()));
    }
    const std::int64_t n = real.dim(0);
    if (n == 0) throw DataError("train_gan: no real rows");

    AdamConfig acfg;
    acfg.lr = cfg.learning_rate;
    Adam opt_d(pair.disc.params(), acfg);
    Adam opt_g(pair.gen.params(), acfg);
    const auto all_d = pair.disc.params();
    const auto all_g = pair.gen.params();

    GanHistory history;
    const std::int64_t B = cfg.batch_size;
    std::vector<double> batch(static_cast<std::size_t>(B) * static_cast<std::size_t>(pair.feature_dim));

    for (int step = 0; step < cfg.steps; ++step) {
        for (std::int64_t i = 0; i < B; ++i) {
            const auto row = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n)));
            const double* src = real.data() + row * pair.feature_dim;
            std::copy(src, src + pair.feature_dim,
                      batch.begin() + static_cast<std::ptrdiff_t>(i * pair.feature_dim));
        }
        Tensor real_batch = Tensor::from({B, static_cast<std::int64_t>(pair.feature_dim)}, batch);

        // Discriminator step: fakes detached so no gradient reaches G.
        detail::zero_params(all_d);
        detail::zero_params(all_g);
        {
            Tape tape;
            Tensor z = sample_noise(cfg, B, rng);
            Tensor fake = detach(gen_forward(tape, pair, z));
            Tensor d_real = disc_forward(tape, pair, real_batch);
            Tensor d_fake = disc_forward(tape, pair, fake);
            Tensor loss = tape.gan_disc_loss(d_real, d_fake);
            history.d_loss.push_back(loss.at(0));
            tape.backward(loss);
            opt_d.step();
        }

        // Generator step: gradient flows through D, update applies to G only.
        detail::zero_params(all_d);
        detail::zero_params(all_g);
        {
            Tape tape;
            Tensor z = sample_noise(cfg, B, rng);
            Tensor fake = gen_forward(tape, pair, z);
            Tensor d_fake = disc_forward(tape, pair, fake);
            Tensor loss = tape.gan_gen_loss(d_fake);
            history.g_loss.push_back(loss.at(0));
            tape.backward(loss);
            opt_g.step();
        }
    }
    return history;
}

// Fraction of rows the discriminator classifies correctly (threshold 0.5)
// over the union of the real and fake sets.
inline double disc_accuracy(const GanPair& pair, const Tensor& real, const Tensor& fake) {
    Tape tape(false);
    Tensor dr = disc_forward(tape, pair, real);
    Tensor df = disc_forward(tape, pair, fake);
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < dr.size(); ++i) {
        if (dr.data()[i] > 0.5) ++correct;
    }
    for (std::int64_t i = 0; i < df.size(); ++i) {
        if (df.data()[i] <= 0.5) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dr.size() + df.size());
}

inline Tensor synthesize(const GanPair& pair, std::int64_t n, const GanConfig& cfg,
                         SeededRng& rng) {
    if (n <= 0) throw DataError("synthesize: row count must be positive");
    Tensor z = sample_noise(cfg, n, rng);
    Tape tape(false);
    return gen_forward(tape, pair, z);
}

constexpr std::int64_t kMinRealRowsForGan = 50;

struct AugmentClassOutcome {
    int class_index = 0;
    std::string class_name;
    std::int64_t real_rows = 0;
    std::int64_t target = 0;
    std::int64_t generated = 0;
    bool refused = false;
    std::string reason;
};

struct AugmentReport {
    std::vector<AugmentClassOutcome> classes;

    std::int64_t total_generated() const {
        std::int64_t s = 0;
        for (const auto& c : classes) s += c.generated;
        return s;
    }
};

// Trains one GAN per targeted class (class-index order, each on an
// independent substream of cfg.seed) and appends synthetic rows until each
// class reaches its target count. Original rows are untouched; synthetic rows
// carry the flag. Classes with fewer than kMinRealRowsForGan real rows are
// refused with a recorded reason, and targets at or below the current count
// generate nothing.
inline LabeledDataset augment_dataset(const LabeledDataset& train,
                                      const std::map<int, std::int64_t>& targets,
                                      const GanConfig& cfg, AugmentReport* report = nullptr) {
    cfg.validate();
    train.validate();
    const auto counts = train.class_counts();
    for (const auto& [cls, target] : targets) {
        if (cls < 0 || cls >= train.codec.num_classes()) {
            throw DataError("augment: class index " + std::to_string(cls) + " outside [0," +
                            std::to_string(train.codec.num_classes()) + ")");
        }
        if (target < 0) throw DataError("augment: negative target for class " + std::to_string(cls));
    }

    LabeledDataset out = train;
    SeededRng base(cfg.seed);
    AugmentReport local;

    // The 50-row gate and the GAN's training rows use real rows only, so a
    // second augmentation pass never trains on earlier synthetic output.
    std::vector<std::int64_t> real_counts(static_cast<std::size_t>(train.codec.num_classes()), 0);
    for (std::int64_t i = 0; i < train.n_rows; ++i) {
        if (!train.synthetic[static_cast<std::size_t>(i)]) {
            ++real_counts[static_cast<std::size_t>(train.y[static_cast<std::size_t>(i)])];
        }
    }

    for (const auto& [cls, target] : targets) { // std::map iterates in class-index order
        AugmentClassOutcome outcome;
        outcome.class_index = cls;
        outcome.class_name = train.codec.decode(cls);
        outcome.real_rows = real_counts[static_cast<std::size_t>(cls)];
        outcome.target = target;

        if (outcome.real_rows < kMinRealRowsForGan) {
            outcome.refused = true;
            outcome.reason = "only " + std::to_string(outcome.real_rows) +
                             " real rows; need at least " + std::to_string(kMinRealRowsForGan);
            local.classes.push_back(outcome);
            continue;
        }
        const std::int64_t missing = target - counts[static_cast<std::size_t>(cls)];
        if (missing <= 0) {
            outcome.reason = "already at or above target";
            local.classes.push_back(outcome);
            continue;
        }

        std::vector<std::int64_t> idx;
        for (std::int64_t i = 0; i < train.n_rows; ++i) {
            if (train.y[static_cast<std::size_t>(i)] == cls &&
                !train.synthetic[static_cast<std::size_t>(i)]) {
                idx.push_back(i);
            }
        }
        Tensor real_rows = train.rows_tensor(idx);

        SeededRng class_rng = base.derive(static_cast<std::uint64_t>(cls));
        GanPair pair = init_gan(cfg, static_cast<int>(train.n_features), class_rng);
        train_gan(pair, real_rows, cfg, class_rng);
        Tensor rows = synthesize(pair, missing, cfg, class_rng);

        out.X.insert(out.X.end(), rows.values().begin(), rows.values().end());
        out.y.insert(out.y.end(), static_cast<std::size_t>(missing), cls);
        out.synthetic.insert(out.synthetic.end(), static_cast<std::size_t>(missing), 1);
        out.n_rows += missing;
        outcome.generated = missing;
        local.classes.push_back(outcome);
    }

    out.validate();
    if (report) *report = local;
    return out;
}

} // namespace flowhunter
