#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <vector>

#include "rflab/adam.hpp"
#include "rflab/dataset.hpp"
#include "rflab/runtime.hpp"
#include "rflab/threadpool.hpp"

namespace rflab {

struct TrainConfig {
    double lr = 1e-4;
    int max_epochs = 2000;
    int batch_size = 16;
    std::uint64_t seed = 1;
    int patience = 25;
    double min_delta = 1e-6;

    void validate() const {
        if (!(lr >= 0.0)) throw ArgumentError("train: lr must be >= 0");
        if (max_epochs < 1) throw ArgumentError("train: max_epochs must be >= 1");
        if (batch_size < 1) throw ArgumentError("train: batch_size must be >= 1");
        if (patience < 1) throw ArgumentError("train: patience must be >= 1");
    }
};

struct EpochRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct RunRecord {
    std::vector<EpochRow> rows;
    std::string stop_reason;
    int best_epoch = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();
    double best_val_acc = 0.0;
    std::uint64_t params_checksum = 0;             // trained parameters at exit
    std::uint64_t frozen_checksum_before = 0;      // stage 2: mbed before/after
    std::uint64_t frozen_checksum_after = 0;
    std::size_t workers = 1;

    void write_csv(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("cannot create run csv: " + path);
        os << "epoch,train_loss,val_loss,val_acc\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.val_acc);
            os << buf;
        }
    }
};

/// Divergence-oriented early stopping: stop once the best validation loss
/// has not improved by at least min_delta for `patience` consecutive epochs,
/// or immediately on a non-finite loss.
class StopMonitor {
public:
    StopMonitor(int patience, double min_delta = 1e-6) : patience_(patience), min_delta_(min_delta) {}

    /// Returns empty string to continue, otherwise the stop reason.
    std::string update(double val_loss) {
        if (!std::isfinite(val_loss)) return "diverged";
        if (val_loss < best_ - min_delta_) {
            best_ = val_loss;
            bad_ = 0;
            return "";
        }
        if (++bad_ >= patience_) return "no improvement for " + std::to_string(patience_) + " epochs";
        return "";
    }

    double best() const { return best_; }

private:
    int patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int bad_ = 0;
};

/// Replays a validation-loss history through the monitor; spec-level contract
/// of the stop rule.
inline bool stop_decision(const std::vector<double>& history, int patience, double min_delta = 1e-6) {
    if (history.empty()) throw ArgumentError("stop_decision: empty history");
    StopMonitor m(patience, min_delta);
    for (double v : history)
        if (!m.update(v).empty()) return true;
    return false;
}

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Deterministic 80/10/10 split of the TTS pool by hash of example id.
inline SplitIndices split_by_id(const std::vector<LabeledExample>& examples) {
    SplitIndices s;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].regime != Regime::tts) continue;
        const std::uint64_t b = fnv1a(examples[i].id) % 10;
        if (b < 8) s.train.push_back(i);
        else if (b == 8) s.val.push_back(i);
        else s.test.push_back(i);
    }
    return s;
}

namespace traindetail {

/// Mean eval-mode loss and accuracy over the given examples. Parallel per
/// example with an index-ordered reduction.
template <typename T, typename LogitsFn>
void eval_metrics(const LogitsFn& logits_fn, const std::vector<int>& labels,
                  const std::vector<std::size_t>& idxs, std::size_t workers, double* loss, double* acc,
                  std::vector<int>* preds_out = nullptr) {
    std::vector<double> losses(idxs.size());
    std::vector<int> preds(idxs.size());
    parallel_for(idxs.size(), workers, [&](std::size_t k, std::size_t) {
        Tensor<T> logits = logits_fn(idxs[k]);
        const XentResult<T> xe = softmax_xent(logits, static_cast<std::size_t>(labels[idxs[k]]));
        losses[k] = static_cast<double>(xe.loss);
        int best = 0;
        for (std::size_t c = 1; c < logits.numel(); ++c)
            if (logits.data[c] > logits.data[best]) best = static_cast<int>(c);
        preds[k] = best;
    });
    double lsum = 0.0;
    std::size_t correct = 0;
    for (std::size_t k = 0; k < idxs.size(); ++k) {
        lsum += losses[k];
        if (preds[k] == labels[idxs[k]]) ++correct;
    }
    *loss = idxs.empty() ? 0.0 : lsum / static_cast<double>(idxs.size());
    *acc = idxs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idxs.size());
    if (preds_out) *preds_out = std::move(preds);
}

template <typename T>
void fisher_yates(std::vector<std::size_t>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

/// Generic epoch loop shared by both stages. GradFn computes the per-example
/// loss and accumulates gradients into the worker's buffer; ValFn returns
/// eval-mode logits for one example index.
template <typename T, typename GradFn, typename ValFn>
RunRecord run_epochs(Model<T>& model, const TrainConfig& cfg, std::uint64_t stage_tag,
                     const std::vector<std::size_t>& train_idx, const std::vector<std::size_t>& val_idx,
                     const std::vector<int>& labels, const GradFn& grad_fn, const ValFn& val_fn) {
    cfg.validate();
    if (train_idx.empty()) throw ArgumentError("train: empty training split");

    const std::size_t workers = worker_count();
    RunRecord rec;
    rec.workers = workers;

    // optimizer state per parameter
    const auto& params = model.params();
    std::vector<AdamState<T>> adam;
    adam.reserve(params.size());
    for (const auto& p : params) adam.emplace_back(p.tensor->numel());
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    std::int64_t opt_step = 0;

    std::vector<GradBuffer<T>> worker_gb(workers);
    for (auto& gb : worker_gb) gb.init_like(params);
    GradBuffer<T> total;
    total.init_like(params);

    // best-epoch snapshot of every parameter
    std::vector<std::vector<T>> best_values;
    StopMonitor monitor(cfg.patience, cfg.min_delta);
    Rng base(cfg.seed);

    std::vector<std::size_t> order = train_idx;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng shuffle_rng = base.derive({stage_tag, 0x73687566ULL, static_cast<std::uint64_t>(epoch)});
        fisher_yates<T>(order, shuffle_rng);

        double train_loss_sum = 0.0;
        std::size_t batches = 0;
        bool diverged = false;
        std::size_t diverged_batch = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
            for (auto& gb : worker_gb) gb.zero();
            std::vector<double> losses(n);
            parallel_for(n, workers, [&](std::size_t k, std::size_t w) {
                const std::size_t idx = order[start + k];
                Rng ex_rng = base.derive({stage_tag, 0x64726F70ULL, static_cast<std::uint64_t>(epoch), idx});
                losses[k] = static_cast<double>(grad_fn(idx, ex_rng, worker_gb[w]));
            });
            total.zero();
            for (auto& gb : worker_gb) total.add(gb);
            total.scale(static_cast<T>(1.0 / static_cast<double>(n)));

            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            batch_loss /= static_cast<double>(n);
            train_loss_sum += batch_loss;
            ++batches;
            if (!std::isfinite(batch_loss)) {
                diverged = true;
                diverged_batch = batches;
                break;
            }

            ++opt_step;
            for (std::size_t pi = 0; pi < params.size(); ++pi) {
                if (!params[pi].trainable) continue;
                Tensor<T>* t = params[pi].tensor;
                adam_step<T>({t->data.data(), t->data.size()}, {total.g[pi].data(), total.g[pi].size()},
                             adam[pi], acfg, opt_step);
            }
        }

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = train_loss_sum / static_cast<double>(std::max<std::size_t>(1, batches));
        eval_metrics<T>(val_fn, labels, val_idx, workers, &row.val_loss, &row.val_acc);
        rec.rows.push_back(row);

        if (diverged || !std::isfinite(row.val_loss)) {
            rec.stop_reason = "diverged at epoch " + std::to_string(epoch) +
                              (diverged ? " (batch " + std::to_string(diverged_batch) + ")" : "");
            break;
        }

        if (row.val_loss < rec.best_val_loss || rec.best_epoch < 0) {
            rec.best_val_loss = row.val_loss;
            rec.best_val_acc = row.val_acc;
            rec.best_epoch = epoch;
            best_values.resize(params.size());
            for (std::size_t pi = 0; pi < params.size(); ++pi) best_values[pi] = params[pi].tensor->data;
        }
        const std::string stop = monitor.update(row.val_loss);
        if (!stop.empty()) {
            rec.stop_reason = stop;
            break;
        }
        if (epoch == cfg.max_epochs) rec.stop_reason = "max_epochs";
    }

    // restore the best point of convergence
    if (!best_values.empty()) {
        auto& mparams = model.params_mutable();
        for (std::size_t pi = 0; pi < mparams.size(); ++pi) mparams[pi].tensor->data = best_values[pi];
    }
    rec.params_checksum = model.checksum();
    return rec;
}

} // namespace traindetail

/// Stage 1 of the two-stage procedure: train the embedding stack with its
/// temporary softmax head. The model must be a mbed-only graph; weights are
/// returned at the best validation epoch.
template <typename T>
RunRecord train_stage1(Model<T>& model, const std::vector<Tensor<T>>& inputs, const std::vector<int>& labels,
                       const SplitIndices& split, const TrainConfig& cfg) {
    if (model.graph().has_atn) throw ConfigError("stage 1 trains the mbed-only graph");
    auto grad_fn = [&](std::size_t idx, Rng& rng, GradBuffer<T>& gb) {
        return model.loss_and_grad_stage1(inputs[idx], static_cast<std::size_t>(labels[idx]), rng, gb);
    };
    auto val_fn = [&](std::size_t idx) {
        Tensor<T> f = model.forward_mbed(inputs[idx], RunMode::eval, nullptr);
        return model.forward_temp_logits(f, RunMode::eval, nullptr);
    };
    return traindetail::run_epochs(model, cfg, 0x5331ULL, split.train, split.val, labels, grad_fn, val_fn);
}

/// Stage 2: freeze the embedding stack, feed its eval-mode output vectors to
/// the ATN and train only the ATN parameters. The frozen stack is
/// byte-checksummed before and after.
template <typename T>
RunRecord train_stage2(Model<T>& model, const std::vector<Tensor<T>>& inputs, const std::vector<int>& labels,
                       const SplitIndices& split, const TrainConfig& cfg) {
    if (!model.graph().has_atn) throw ConfigError("stage 2 needs the full mbed-atn graph");
    model.set_trainable("mbed.", false);
    const std::uint64_t before = model.checksum("mbed.");

    // the frozen mbed is a fixed feature extractor; embed every example once
    std::vector<Tensor<T>> f(inputs.size());
    std::vector<std::size_t> used = split.train;
    used.insert(used.end(), split.val.begin(), split.val.end());
    parallel_for(used.size(), worker_count(), [&](std::size_t k, std::size_t) {
        f[used[k]] = model.forward_mbed(inputs[used[k]], RunMode::eval, nullptr);
    });

    auto grad_fn = [&](std::size_t idx, Rng& rng, GradBuffer<T>& gb) {
        return model.loss_and_grad_atn(f[idx], static_cast<std::size_t>(labels[idx]), rng, gb);
    };
    auto val_fn = [&](std::size_t idx) { return model.forward_atn_logits(f[idx], RunMode::eval, nullptr); };
    RunRecord rec = traindetail::run_epochs(model, cfg, 0x5332ULL, split.train, split.val, labels, grad_fn, val_fn);
    rec.frozen_checksum_before = before;
    rec.frozen_checksum_after = model.checksum("mbed.");
    return rec;
}

} // namespace rflab
