#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "twins/data.hpp"
#include "twins/model.hpp"
#include "twins/optim.hpp"

namespace twins {

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_mse = 0.0;
    double val_mae = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
    bool budget_exhausted = false;
};

/// Means over every (window, channel, step) element.
struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    std::size_t windows = 0;
};

struct TrainOptions {
    double time_budget_seconds = 0.0;  // 0: unlimited
    std::size_t eval_batch = 256;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Forecast metrics of `model` over every stride-1 window of `split` [C, n].
inline Metrics evaluate(const TwinSModel& model, const Tensor& split, std::size_t L, std::size_t T,
                        std::size_t batch = 256) {
    WindowSet ws(split, L, T, 1);
    NoGradGuard guard;
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < ws.size(); b += batch) {
        auto wb = ws.batch_range(b, std::min(ws.size(), b + batch));
        auto pred = model.forward(wb.inputs);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - wb.targets[i];
            se += d * d;
            ae += std::abs(d);
        }
        count += pred.size();
    }
    return {se / static_cast<double>(count), ae / static_cast<double>(count), ws.size()};
}

/// Metrics of the per-channel lookback-mean forecaster over the same windows.
inline Metrics mean_baseline(const Tensor& split, std::size_t L, std::size_t T) {
    WindowSet ws(split, L, T, 1);
    const std::size_t C = ws.channels(), n = split.dim(1);
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (std::size_t s : ws.starts())
        for (std::size_t c = 0; c < C; ++c) {
            double mu = 0.0;
            for (std::size_t t = 0; t < L; ++t) mu += split[c * n + s + t];
            mu /= static_cast<double>(L);
            for (std::size_t t = 0; t < T; ++t) {
                const double d = mu - split[c * n + s + L + t];
                se += d * d;
                ae += std::abs(d);
                ++count;
            }
        }
    return {se / static_cast<double>(count), ae / static_cast<double>(count), ws.size()};
}

namespace detail {
inline std::vector<std::vector<double>> snapshot(const TwinSModel& m) {
    std::vector<std::vector<double>> out;
    for (auto& t : m.parameters()) out.emplace_back(t.values().begin(), t.values().end());
    return out;
}
inline void restore(TwinSModel& m, const std::vector<std::vector<double>>& snap) {
    auto ps = m.parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), ps[i].values().begin());
}
}  // namespace detail

/// Trains `model` in place with Adam on MSE over shuffled mini-batches,
/// early-stopping on validation MSE and restoring the best weights.
inline TrainHistory train(TwinSModel& model, const SplitDataset& data, const TrainOptions& opt = {}) {
    const auto& cfg = model.config();
    if (data.channels() != cfg.channels)
        throw DataError("dataset has " + std::to_string(data.channels()) + " channels, model expects " +
                        std::to_string(cfg.channels));
    WindowSet train_ws(data.train(), cfg.lookback, cfg.horizon, 1);
    const Tensor val = data.val();
    auto params = model.parameters();
    Adam adam(params, {cfg.lr});
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    Rng dropout_rng(cfg.seed + 1);

    TrainHistory hist;
    double best = std::numeric_limits<double>::infinity();
    auto best_weights = detail::snapshot(model);
    std::size_t since_best = 0;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

    std::vector<std::size_t> order(train_ws.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t b = 0, bi = 0; b < order.size(); b += cfg.batch, ++bi) {
            std::vector<std::size_t> idx(order.begin() + b, order.begin() + std::min(order.size(), b + cfg.batch));
            auto wb = train_ws.batch(idx);
            active_tape().clear();
            auto pred = model.forward(wb.inputs, nullptr, cfg.dropout > 0 ? &dropout_rng : nullptr);
            auto loss = ops::mse(pred, wb.targets);
            if (!std::isfinite(loss.item())) {
                active_tape().clear();
                throw NumericError("non-finite training loss at batch " + std::to_string(bi) + " of epoch " +
                                   std::to_string(epoch));
            }
            backward(loss);
            if (cfg.clip_norm > 0) clip_grad_norm(params, cfg.clip_norm);
            adam.step();
            adam.zero_grad();
            loss_sum += loss.item() * static_cast<double>(idx.size());
            seen += idx.size();
            if (opt.time_budget_seconds > 0 && elapsed() > opt.time_budget_seconds) {
                hist.budget_exhausted = true;
                break;
            }
        }
        const auto vm = evaluate(model, val, cfg.lookback, cfg.horizon, opt.eval_batch);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)), vm.mse, vm.mae,
                        elapsed()};
        hist.epochs.push_back(rec);
        if (opt.on_epoch) opt.on_epoch(rec);
        if (vm.mse < best) {
            best = vm.mse;
            hist.best_epoch = epoch;
            best_weights = detail::snapshot(model);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            hist.stopped_early = true;
            break;
        }
        if (hist.budget_exhausted) break;
    }
    detail::restore(model, best_weights);
    return hist;
}

}  // namespace twins
