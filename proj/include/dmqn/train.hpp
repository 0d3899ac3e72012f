#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dmqn/autodiff.hpp"
#include "dmqn/checkpoint.hpp"
#include "dmqn/dataset.hpp"
#include "dmqn/metrics.hpp"
#include "dmqn/model.hpp"
#include "dmqn/optim.hpp"
#include "dmqn/rng.hpp"

namespace dmqn {

struct TrainConfig {
    std::size_t batch_size = 256;
    AdamConfig adam{};
    std::size_t epochs = 3;
    double tau_start = 1.0;
    double tau_end = 0.1;
    double clip_norm = 5.0;
    std::uint64_t seed = 1;
    std::string checkpoint_path;  // written after every epoch when set

    void validate() const {
        if (batch_size == 0) throw ContractError("batch_size must be positive");
        if (epochs == 0) throw ContractError("epochs must be positive");
        if (!(tau_end > 0) || !(tau_start >= tau_end)) throw ContractError("need tau_start >= tau_end > 0");
        if (!(adam.lr >= 0)) throw ContractError("learning rate must be nonnegative");
        if (!(clip_norm > 0)) throw ContractError("clip_norm must be positive");
    }
};

/// Exponential anneal from tau_start at step 0 to tau_end at the last step.
inline double temperature_at(const TrainConfig& cfg, std::uint64_t step, std::uint64_t total_steps) {
    if (total_steps <= 1) return cfg.tau_start;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, frac);
}

struct EpochReport {
    std::size_t epoch = 0;
    double train_logloss = 0;  // mean over the epoch's training forwards (noise on)
    double final_temperature = 0;
    double seconds = 0;
    std::optional<MetricsReport> validation;
};

struct TrainProgress {
    std::size_t epoch = 0;
    std::uint64_t step = 0;
    std::uint64_t total_steps = 0;
    double batch_loss = 0;
    double temperature = 0;
    double grad_norm = 0;
};

/// Noise-free predictions and metrics over a source.
inline MetricsReport evaluate(Model& model, const InstanceSource& data, std::vector<double>* predictions = nullptr) {
    std::vector<double> y_hat;
    std::vector<int> labels;
    y_hat.reserve(data.size());
    labels.reserve(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto inst = data.at(i);
        y_hat.push_back(predict_instance(model, inst));
        labels.push_back(inst.label);
    }
    if (predictions) *predictions = y_hat;
    return make_report(y_hat, labels);
}

/// Minibatch Adam on mean logloss. Every random choice (shuffle order, Gumbel
/// noise) derives from cfg.seed, so equal inputs give bitwise-equal parameters.
inline std::vector<EpochReport> train(Model& model, const InstanceSource& data, const TrainConfig& cfg,
                                      const InstanceSource* validation = nullptr,
                                      const std::function<void(const TrainProgress&)>& on_step = {}) {
    cfg.validate();
    if (data.size() == 0) throw ContractError("train: empty dataset");

    std::vector<Parameter*> params;
    model.visit([&](Parameter& p) { params.push_back(&p); });
    Adam adam(cfg.adam);

    const std::size_t n = data.size();
    const std::uint64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::uint64_t total_steps = batches_per_epoch * cfg.epochs;
    std::vector<std::size_t> order(n);
    std::vector<EpochReport> reports;
    std::uint64_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed({cfg.seed, 100, epoch}));
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

        double epoch_loss = 0;
        double tau = cfg.tau_start;
        for (std::uint64_t b = 0; b < batches_per_epoch; ++b, ++step) {
            const std::size_t begin = b * cfg.batch_size;
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            tau = temperature_at(cfg, step, total_steps);
            model.zero_grad();
            double batch_loss = 0;
            const float inv_batch = 1.0f / static_cast<float>(end - begin);
            for (std::size_t j = begin; j < end; ++j) {
                const auto inst = data.at(order[j]);
                Graph g(true);
                ForwardOptions opt;
                opt.training = true;
                opt.temperature = tau;
                opt.noise_seed = derive_seed({cfg.seed, 200, step, j - begin});
                auto fwd = model.forward(g, inst, opt);
                auto loss = logloss(fwd.y_hat, inst.label);
                const double lv = loss.item();
                if (!std::isfinite(lv)) {
                    throw NumericError("non-finite loss at step " + std::to_string(step) + " (instance " +
                                       std::to_string(order[j]) + ", tensor y_hat)");
                }
                batch_loss += lv;
                g.backward(scale(loss, inv_batch));
            }
            for (auto* p : params) {
                for (auto gv : p->grad) {
                    if (!std::isfinite(gv)) {
                        throw NumericError("non-finite gradient at step " + std::to_string(step) + " in tensor " +
                                           p->name);
                    }
                }
            }
            const double norm = clip_grad_norm(params, cfg.clip_norm);
            adam.step(params);
            epoch_loss += batch_loss;
            if (on_step) {
                on_step({epoch, step, total_steps, batch_loss / static_cast<double>(end - begin), tau, norm});
            }
        }

        EpochReport rep;
        rep.epoch = epoch;
        rep.train_logloss = epoch_loss / static_cast<double>(n);
        rep.final_temperature = tau;
        if (validation && validation->size() > 0) rep.validation = evaluate(model, *validation);
        if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, model);
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace dmqn
