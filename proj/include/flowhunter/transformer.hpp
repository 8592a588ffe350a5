#pragma once

// Transformer encoder classifier over tabular flows. Each of the input_len
// features becomes one sequence position of channel width 1; pre-norm encoder
// blocks are followed by mean pooling over positions and a small MLP head.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adam.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "rng.hpp"
#include "tape.hpp"
#include "tensor.hpp"

namespace flowhunter {

struct ModelConfig {
    int input_len = 95;
    int head_size = 64;
    int num_heads = 4;
    int filters = 64; // hidden width of the position-wise feed-forward
    int num_blocks = 2;
    double dropout = 0.1;
    std::vector<int> mlp_units = {64};
    int num_classes = 15;
    double ln_eps = 1e-6;

    void validate() const {
        if (input_len <= 0 || head_size <= 0 || num_heads <= 0 || filters <= 0 ||
            num_blocks <= 0 || num_classes <= 1) {
            throw TensorError("model config: all sizes must be positive");
        }
        if (!(dropout >= 0.0 && dropout < 1.0)) {
            throw TensorError("model config: dropout must lie in [0,1)");
        }
        if (!(ln_eps > 0.0)) throw TensorError("model config: ln_eps must be positive");
        for (int u : mlp_units) {
            if (u <= 0) throw TensorError("model config: mlp unit sizes must be positive");
        }
    }
};

struct TrainConfig {
    int epochs = 10;
    int batch_size = 256;
    AdamConfig adam;
    std::uint64_t seed = 42;

    void validate() const {
        if (epochs <= 0) throw TensorError("train config: epochs must be positive");
        if (batch_size <= 0) throw TensorError("train config: batch size must be positive");
        adam.validate();
    }
};

// Glorot uniform: limit sqrt(6 / (fan_in + fan_out)), biases zero.
inline Tensor glorot_uniform(std::int64_t fan_in, std::int64_t fan_out, SeededRng& rng,
                             const std::string& name) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& x : v) x = rng.uniform(-limit, limit);
    Tensor t = Tensor::from({fan_in, fan_out}, std::move(v));
    t.set_name(name);
    return t;
}

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams make(std::int64_t channels, const std::string& name) {
        LayerNormParams p;
        p.gain = Tensor::full({channels}, 1.0);
        p.gain.set_name(name + ".gain");
        p.bias = Tensor::zeros({channels});
        p.bias.set_name(name + ".bias");
        return p;
    }
};

struct AttentionParams {
    std::vector<Tensor> wq, wk, wv; // one [channels, head_size] per head
    Tensor wo;                      // [num_heads * head_size, channels]

    static AttentionParams make(std::int64_t channels, int num_heads, std::int64_t head_size,
                                SeededRng& rng, const std::string& name) {
        AttentionParams p;
        for (int h = 0; h < num_heads; ++h) {
            const std::string hn = name + ".head" + std::to_string(h);
            p.wq.push_back(glorot_uniform(channels, head_size, rng, hn + ".wq"));
            p.wk.push_back(glorot_uniform(channels, head_size, rng, hn + ".wk"));
            p.wv.push_back(glorot_uniform(channels, head_size, rng, hn + ".wv"));
        }
        p.wo = glorot_uniform(static_cast<std::int64_t>(num_heads) * head_size, channels, rng,
                              name + ".wo");
        return p;
    }
};

struct FfnParams {
    Tensor w1, b1, w2, b2;

    static FfnParams make(std::int64_t channels, std::int64_t filters, SeededRng& rng,
                          const std::string& name) {
        FfnParams p;
        p.w1 = glorot_uniform(channels, filters, rng, name + ".w1");
        p.b1 = Tensor::zeros({filters});
        p.b1.set_name(name + ".b1");
        p.w2 = glorot_uniform(filters, channels, rng, name + ".w2");
        p.b2 = Tensor::zeros({channels});
        p.b2.set_name(name + ".b2");
        return p;
    }
};

struct EncoderBlockParams {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    FfnParams ffn;
};

struct HeadParams {
    std::vector<Tensor> w, b; // hidden dense layers
    Tensor w_out, b_out;
};

// Scaled dot-product attention: softmax(q k^T / sqrt(d_k)) v.
// q, k, v are [L, d_k] or batched [B, L, d_k].
inline Tensor attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v) {
    const std::int64_t dk = q.dim(q.rank() - 1);
    Tensor scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor weights = tape.softmax_rows(scores);
    return tape.matmul(weights, v);
}

// Per-head projections, scaled dot-product attention, concat, output
// projection. x is [L, channels] or [B, L, channels].
inline Tensor multi_head(Tape& tape, const Tensor& x, const AttentionParams& p) {
    std::vector<Tensor> heads;
    heads.reserve(p.wq.size());
    for (std::size_t h = 0; h < p.wq.size(); ++h) {
        Tensor q = tape.matmul(x, p.wq[h]);
        Tensor k = tape.matmul(x, p.wk[h]);
        Tensor v = tape.matmul(x, p.wv[h]);
        heads.push_back(attention(tape, q, k, v));
    }
    Tensor cat = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
    return tape.matmul(cat, p.wo);
}

// Position-wise feed-forward (width-1 convolutions over positions):
// relu(x w1 + b1) w2 + b2.
inline Tensor position_ffn(Tape& tape, const Tensor& x, const FfnParams& p) {
    Tensor h = tape.relu(tape.add_rowvec(tape.matmul(x, p.w1), p.b1));
    return tape.add_rowvec(tape.matmul(h, p.w2), p.b2);
}

inline Tensor layer_norm(Tape& tape, const Tensor& x, const LayerNormParams& p, double eps) {
    return tape.layer_norm_seq(x, p.gain, p.bias, eps);
}

// Pre-norm residual block:
//   a   = x + Dropout(MultiHead(LN1(x)))
//   out = a + Dropout(FFN(LN2(a)))
inline Tensor encoder_block(Tape& tape, const Tensor& x, const EncoderBlockParams& p, double eps,
                            double dropout, bool training, SeededRng* dropout_rng) {
    Tensor attn_out = multi_head(tape, layer_norm(tape, x, p.ln1, eps), p.attn);
    if (training && dropout > 0.0) {
        if (!dropout_rng) throw TensorError("encoder_block: training with dropout needs an rng");
        attn_out = tape.dropout(attn_out, dropout, *dropout_rng);
    }
    Tensor a = tape.add(x, attn_out);
    Tensor ffn_out = position_ffn(tape, layer_norm(tape, a, p.ln2, eps), p.ffn);
    if (training && dropout > 0.0) {
        ffn_out = tape.dropout(ffn_out, dropout, *dropout_rng);
    }
    return tape.add(a, ffn_out);
}

class TransformerClassifier {
public:
    static constexpr std::int64_t kChannels = 1;

    TransformerClassifier(ModelConfig cfg, SeededRng init_rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        for (int b = 0; b < cfg_.num_blocks; ++b) {
            const std::string bn = "block" + std::to_string(b);
            EncoderBlockParams blk;
            blk.ln1 = LayerNormParams::make(kChannels, bn + ".ln1");
            blk.attn = AttentionParams::make(kChannels, cfg_.num_heads, cfg_.head_size, init_rng,
                                             bn + ".attn");
            blk.ln2 = LayerNormParams::make(kChannels, bn + ".ln2");
            blk.ffn = FfnParams::make(kChannels, cfg_.filters, init_rng, bn + ".ffn");
            blocks_.push_back(std::move(blk));
        }
        std::int64_t width = kChannels;
        for (std::size_t i = 0; i < cfg_.mlp_units.size(); ++i) {
            const auto units = static_cast<std::int64_t>(cfg_.mlp_units[i]);
            const std::string hn = "head.dense" + std::to_string(i);
            head_.w.push_back(glorot_uniform(width, units, init_rng, hn + ".w"));
            Tensor b = Tensor::zeros({units});
            b.set_name(hn + ".b");
            head_.b.push_back(b);
            width = units;
        }
        head_.w_out = glorot_uniform(width, cfg_.num_classes, init_rng, "head.out.w");
        head_.b_out = Tensor::zeros({cfg_.num_classes});
        head_.b_out.set_name("head.out.b");
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<EncoderBlockParams>& blocks() const { return blocks_; }
    std::vector<EncoderBlockParams>& blocks() { return blocks_; }
    const HeadParams& head() const { return head_; }
    HeadParams& head() { return head_; }

    // x is [B, input_len]; returns class probabilities [B, num_classes].
    Tensor forward(Tape& tape, const Tensor& x, bool training = false,
                   SeededRng* dropout_rng = nullptr) const {
        if (x.rank() != 2 || x.dim(1) != cfg_.input_len) {
            throw ShapeError("forward: expected [batch x " + std::to_string(cfg_.input_len) +
                             "], got " + shape_str(x.shape()));
        }
        const std::int64_t B = x.dim(0);
        Tensor h = tape.reshape(x, {B, static_cast<std::int64_t>(cfg_.input_len), kChannels});
        for (const auto& blk : blocks_) {
            h = encoder_block(tape, h, blk, cfg_.ln_eps, cfg_.dropout, training, dropout_rng);
        }
        Tensor pooled = tape.mean_positions(h); // [B, channels]
        Tensor z = pooled;
        for (std::size_t i = 0; i < head_.w.size(); ++i) {
            z = tape.relu(tape.add_rowvec(tape.matmul(z, head_.w[i]), head_.b[i]));
        }
        Tensor logits = tape.add_rowvec(tape.matmul(z, head_.w_out), head_.b_out);
        return tape.softmax_rows(logits);
    }

    // Argmax per row; ties break toward the lowest class index.
    std::vector<int> predict(const Tensor& x) const {
        Tape tape(false);
        Tensor probs = forward(tape, x, false, nullptr);
        return argmax_rows(probs);
    }

    static std::vector<int> argmax_rows(const Tensor& probs) {
        const std::int64_t B = probs.dim(0), C = probs.dim(1);
        std::vector<int> out(static_cast<std::size_t>(B));
        for (std::int64_t b = 0; b < B; ++b) {
            int best = 0;
            double best_v = probs.at(b, 0);
            for (int c = 1; c < C; ++c) {
                if (probs.at(b, c) > best_v) {
                    best_v = probs.at(b, c);
                    best = c;
                }
            }
            out[static_cast<std::size_t>(b)] = best;
        }
        return out;
    }

    // Stable order: blocks in depth order (ln1, per-head q/k/v, wo, ln2,
    // ffn w1/b1/w2/b2), then head layers, then the output layer.
    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps;
        for (const auto& blk : blocks_) {
            ps.push_back(blk.ln1.gain);
            ps.push_back(blk.ln1.bias);
            for (std::size_t h = 0; h < blk.attn.wq.size(); ++h) {
                ps.push_back(blk.attn.wq[h]);
                ps.push_back(blk.attn.wk[h]);
                ps.push_back(blk.attn.wv[h]);
            }
            ps.push_back(blk.attn.wo);
            ps.push_back(blk.ln2.gain);
            ps.push_back(blk.ln2.bias);
            ps.push_back(blk.ffn.w1);
            ps.push_back(blk.ffn.b1);
            ps.push_back(blk.ffn.w2);
            ps.push_back(blk.ffn.b2);
        }
        for (std::size_t i = 0; i < head_.w.size(); ++i) {
            ps.push_back(head_.w[i]);
            ps.push_back(head_.b[i]);
        }
        ps.push_back(head_.w_out);
        ps.push_back(head_.b_out);
        return ps;
    }

private:
    ModelConfig cfg_;
    std::vector<EncoderBlockParams> blocks_;
    HeadParams head_;
};

// Mean loss and accuracy of the model on a dataset, evaluated in inference
// mode batch by batch.
inline std::pair<double, double> evaluate_model(const TransformerClassifier& model,
                                                const LabeledDataset& ds, int batch_size) {
    if (ds.n_rows == 0) throw DataError("evaluate: empty dataset");
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < ds.n_rows; start += batch_size) {
        const std::int64_t end = std::min(ds.n_rows, start + batch_size);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(end - start));
        for (std::int64_t i = start; i < end; ++i) idx[static_cast<std::size_t>(i - start)] = i;
        Tensor xb = ds.rows_tensor(idx);
        const std::vector<int> yb = ds.labels_for(idx);
        Tape tape(false);
        Tensor probs = model.forward(tape, xb, false, nullptr);
        loss_sum += tape.cross_entropy(probs, yb).at(0) * static_cast<double>(end - start);
        const auto pred = TransformerClassifier::argmax_rows(probs);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == yb[i]) ++correct;
        }
    }
    return {loss_sum / static_cast<double>(ds.n_rows),
            static_cast<double>(correct) / static_cast<double>(ds.n_rows)};
}

inline std::vector<int> predict_dataset(const TransformerClassifier& model,
                                        const LabeledDataset& ds, int batch_size) {
    std::vector<int> preds;
    preds.reserve(static_cast<std::size_t>(ds.n_rows));
    for (std::int64_t start = 0; start < ds.n_rows; start += batch_size) {
        const std::int64_t end = std::min(ds.n_rows, start + batch_size);
        std::vector<std::int64_t> idx(static_cast<std::size_t>(end - start));
        for (std::int64_t i = start; i < end; ++i) idx[static_cast<std::size_t>(i - start)] = i;
        const auto batch_preds = model.predict(ds.rows_tensor(idx));
        preds.insert(preds.end(), batch_preds.begin(), batch_preds.end());
    }
    return preds;
}

// Minibatch training with Adam. Shuffling and dropout draw from substreams
// of cfg.seed, so a given (model init, data, config) is fully reproducible.
// Per-epoch train loss/accuracy are running averages over the epoch's
// batches; test metrics are evaluated after each epoch.
inline TrainingHistory train_classifier(
    TransformerClassifier& model, const LabeledDataset& train, const LabeledDataset& test,
    const TrainConfig& cfg,
    const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
    cfg.validate();
    train.validate();
    test.validate();
    if (train.n_features != model.config().input_len) {
        throw ShapeError("train: dataset has " + std::to_string(train.n_features) +
                         " features, model expects " + std::to_string(model.config().input_len));
    }

    SeededRng root(cfg.seed);
    SeededRng shuffle_rng = root.derive(1);
    SeededRng dropout_rng = root.derive(2);

    Adam opt(model.parameters(), cfg.adam);
    TrainingHistory history;

    std::vector<std::int64_t> order(static_cast<std::size_t>(train.n_rows));
    for (std::int64_t i = 0; i < train.n_rows; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::int64_t correct = 0;
        for (std::int64_t start = 0; start < train.n_rows; start += cfg.batch_size) {
            const std::int64_t end = std::min(train.n_rows, start + cfg.batch_size);
            const std::vector<std::int64_t> idx(order.begin() + start, order.begin() + end);
            Tensor xb = train.rows_tensor(idx);
            const std::vector<int> yb = train.labels_for(idx);

            Tape tape;
            Tensor probs = model.forward(tape, xb, true, &dropout_rng);
            Tensor loss = tape.cross_entropy(probs, yb);
            loss_sum += loss.at(0) * static_cast<double>(end - start);
            const auto pred = TransformerClassifier::argmax_rows(probs);
            for (std::size_t i = 0; i < pred.size(); ++i) {
                if (pred[i] == yb[i]) ++correct;
            }
            tape.backward(loss);
            opt.step();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train.n_rows);
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(train.n_rows);
        const auto [tl, ta] = evaluate_model(model, test, cfg.batch_size);
        stats.test_loss = tl;
        stats.test_acc = ta;
        history.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    return history;
}

} // namespace flowhunter
