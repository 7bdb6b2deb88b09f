// Desk-scale joint training of the restoration and classifier branches,
// with the random-label strategy, per-epoch reports and resumable
// checkpoints. Gradient evaluation may fan out over model clones; the
// reduction order is fixed by configuration, so results do not depend on
// scheduling.
#pragma once

#include <filesystem>
#include <thread>

#include "mowe/optim.hpp"
#include "mowe/checkpoint.hpp"

namespace mowe {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule lr_schedule = LrSchedule::Cosine;
    double lr_min_factor = 0.05;  // cosine floor as a fraction of lr
    int batch_size = 2;
    int epochs = 50;
    double lambda_cls = 0.1;
    double cls_lr_factor = 0.25;  // classifier-branch step-size multiplier
    uint64_t seed = 0;
    bool random_label = true;
    int grad_workers = 2;        // gradient-evaluation clones per batch
    int cls_freeze_epoch = -1;   // freeze classifier from this epoch on; -1 = never
    std::string out_dir;         // empty = keep everything in memory
    bool resume = false;

    void validate() const {
        if (lr <= 0 || beta1 <= 0 || beta2 <= 0 || eps <= 0) throw ParamError("train: rates must be positive");
        if (lambda_cls < 0) throw ParamError("train: lambda_cls must be >= 0");
        if (batch_size < 1 || epochs < 0 || grad_workers < 1) throw ParamError("train: bad loop sizes");
        if (lr_min_factor < 0 || lr_min_factor > 1) throw ParamError("train: lr_min_factor must lie in [0,1]");
    }

    // epoch-indexed learning rate; stateless, so resumed runs see the same values
    double lr_at(int epoch) const {
        if (lr_schedule == LrSchedule::Constant || epochs <= 1) return lr;
        double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
        double lo = lr * lr_min_factor;
        return lo + (lr - lo) * 0.5 * (1.0 + std::cos(M_PI * t));
    }
};

// Fixed ids for single weathers; Mix draws uniformly over its components
// each epoch (random-label strategy) or takes its own 5th class when the
// strategy is disabled.
inline int random_label_assign(const WeatherSample& sample, uint64_t train_seed, int epoch,
                               bool random_label_enabled) {
    switch (sample.label) {
        case WeatherKind::Rain: return 0;
        case WeatherKind::Fog: return 1;
        case WeatherKind::Snow: return 2;
        case WeatherKind::Clear: return 3;
        case WeatherKind::Mix: break;
    }
    if (!random_label_enabled) return 4;
    const auto& comps = sample.params.components;
    if (comps.empty()) throw UsageError("random_label_assign: mix sample without components");
    Rng rng(derive_seed(train_seed, "random-label", epoch, sample.id));
    return static_cast<int>(comps[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(comps.size()) - 1))]);
}

// ids a classifier prediction may legitimately take for this sample
inline std::vector<int> allowed_class_ids(const WeatherSample& sample, bool random_label_enabled) {
    if (sample.label != WeatherKind::Mix) return {static_cast<int>(sample.label)};
    if (!random_label_enabled) return {4};
    std::vector<int> ids;
    for (WeatherKind c : sample.params.components) ids.push_back(static_cast<int>(c));
    return ids;
}

// L = L1(pred, target) + lambda_cls * CE(weather_logits, class_id)
inline Tensor training_loss(const Tensor& pred, const Tensor& target, const Tensor& weather_logits,
                            int class_id, double lambda_cls) {
    Tensor loss = l1_loss(pred, target);
    if (lambda_cls > 0.0) loss = add(loss, scale(cross_entropy(weather_logits, class_id), lambda_cls));
    return loss;
}

struct EpochReport {
    int epoch = 0;
    double mean_l1 = 0.0;
    double mean_ce = 0.0;
    std::array<double, kNumWeatherKinds> accuracy{};  // indexed by WeatherKind
    std::vector<std::vector<double>> routing;         // [weather][expert], rows normalized
};

namespace detail {

struct SampleStats {
    double l1 = 0.0;
    double ce = 0.0;
    bool cls_correct = false;
    WeatherKind label = WeatherKind::Clear;
    std::vector<double> gate_sums;
};

// forward/backward for one sample; gradients accumulate into the params of
// `model`
inline SampleStats grad_sample(const MoweModel& model, const WeatherSample& sample, int class_id,
                               bool random_label_enabled, double lambda_cls) {
    Tape tape;
    Tape::Scope scope(tape);
    RestoreResult res = model.restore(sample.degraded);
    Tensor l1 = l1_loss(res.pred, sample.clean);
    Tensor loss = l1;
    Tensor ce;
    if (lambda_cls > 0.0) {
        ce = cross_entropy(res.weather_logits, class_id);
        loss = add(loss, scale(ce, lambda_cls));
    }
    tape.backward(loss);

    SampleStats st;
    st.l1 = l1.item();
    st.ce = ce.defined() ? ce.item() : 0.0;
    st.label = sample.label;
    int pred_class = argmax(res.weather_logits.vec());
    for (int id : allowed_class_ids(sample, random_label_enabled))
        if (pred_class == id) st.cls_correct = true;
    st.gate_sums = collect_gate_sums(res.records);
    return st;
}

inline void write_epoch_csv_header(std::ostream& out, int num_experts) {
    out << "epoch,l1,ce,acc_rain,acc_fog,acc_snow,acc_clear,acc_mix";
    for (int wk = 0; wk < kNumWeatherKinds; ++wk)
        for (int e = 0; e < num_experts; ++e)
            out << ",rs_" << weather_name(static_cast<WeatherKind>(wk)) << "_e" << e;
    out << "\n";
}

inline void write_epoch_csv_row(std::ostream& out, const EpochReport& rep) {
    out << rep.epoch << "," << rep.mean_l1 << "," << rep.mean_ce;
    for (WeatherKind wk : {WeatherKind::Rain, WeatherKind::Fog, WeatherKind::Snow, WeatherKind::Clear,
                           WeatherKind::Mix})
        out << "," << rep.accuracy[static_cast<size_t>(wk)];
    for (const auto& row : rep.routing)
        for (double v : row) out << "," << v;
    out << "\n";
}

}  // namespace detail

struct TrainResult {
    std::vector<EpochReport> reports;
    int epochs_done = 0;
};

inline Checkpoint training_checkpoint(const MoweModel& model, const AdamState& opt, int epochs_done) {
    Checkpoint ckpt = model_to_checkpoint(model, {{"train.epochs_done", std::to_string(epochs_done)},
                                                  {"train.adam_step", std::to_string(opt.step)}});
    ParamList params = model.params();
    for (size_t i = 0; i < params.size(); ++i) {
        ckpt.blobs.push_back({"adam.m." + params[i].name,
                              Tensor::from_data(params[i].tensor.shape(), opt.m[i])});
        ckpt.blobs.push_back({"adam.v." + params[i].name,
                              Tensor::from_data(params[i].tensor.shape(), opt.v[i])});
    }
    return ckpt;
}

inline TrainResult train(MoweModel& model, const DatasetSplit& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.train.empty()) throw ParamError("train: empty training split");
    namespace fs = std::filesystem;

    ParamList params = model.params();
    for (auto& p : params) p.tensor.set_requires_grad(true);
    AdamConfig opt_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
    AdamState opt;
    opt.init(params);

    int start_epoch = 0;
    std::string ckpt_path = cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "ckpt_last.mowe").string();
    if (cfg.resume && !ckpt_path.empty() && fs::exists(ckpt_path)) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        load_model_params(model, ckpt);
        start_epoch = std::stoi(*ckpt.find_meta("train.epochs_done"));
        opt.step = std::stoll(*ckpt.find_meta("train.adam_step"));
        for (size_t i = 0; i < params.size(); ++i) {
            opt.m[i] = ckpt.find_blob("adam.m." + params[i].name)->vec();
            opt.v[i] = ckpt.find_blob("adam.v." + params[i].name)->vec();
        }
    }

    std::vector<bool> frozen(params.size(), false);
    std::vector<double> lr_scale(params.size(), 1.0);
    for (size_t i = 0; i < params.size(); ++i)
        if (params[i].name.rfind("classifier.", 0) == 0) lr_scale[i] = cfg.cls_lr_factor;
    auto apply_freeze = [&](int epoch) {
        if (cfg.cls_freeze_epoch < 0) return;
        bool freeze = epoch >= cfg.cls_freeze_epoch;
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].name.rfind("classifier.", 0) == 0) frozen[i] = freeze;
    };

    std::ofstream csv;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        std::string csv_path = (fs::path(cfg.out_dir) / "epochs.csv").string();
        bool fresh = start_epoch == 0 || !fs::exists(csv_path);
        csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
        if (fresh) detail::write_epoch_csv_header(csv, model.cfg.num_experts);
    }

    int workers = std::min(cfg.grad_workers, cfg.batch_size);
    std::vector<std::unique_ptr<MoweModel>> clones;
    if (workers > 1)
        for (int w = 0; w < workers; ++w) {
            clones.push_back(std::make_unique<MoweModel>(model.cfg, 0));
            for (auto& p : clones.back()->params()) p.tensor.set_requires_grad(true);
        }

    TrainResult result;
    result.epochs_done = start_epoch;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        apply_freeze(epoch);
        std::vector<int> order(data.train.size());
        for (size_t i = 0; i < order.size(); ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", epoch));
        shuffle_rng.shuffle(order);

        double sum_l1 = 0.0, sum_ce = 0.0;
        std::array<int, kNumWeatherKinds> kind_total{}, kind_hit{};
        std::vector<ImageRouting> routing_items;

        for (size_t beg = 0; beg < order.size(); beg += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), beg + static_cast<size_t>(cfg.batch_size));
            int n_batch = static_cast<int>(end - beg);
            std::vector<detail::SampleStats> stats(static_cast<size_t>(n_batch));

            for (auto& p : params) p.tensor.zero_grad();

            int t_used = std::min(workers, n_batch);
            if (t_used <= 1) {
                for (int b = 0; b < n_batch; ++b) {
                    const WeatherSample& sample = data.train[static_cast<size_t>(order[beg + static_cast<size_t>(b)])];
                    int cid = random_label_assign(sample, cfg.seed, epoch, cfg.random_label);
                    stats[static_cast<size_t>(b)] =
                        detail::grad_sample(model, sample, cid, cfg.random_label, cfg.lambda_cls);
                }
            } else {
                // every worker clone sees the same parameters and owns its
                // gradient buffers; partition is by batch position, so the
                // result is independent of scheduling
                std::vector<std::thread> threads;
                for (int w = 0; w < t_used; ++w) {
                    clones[static_cast<size_t>(w)]->copy_params_from(model);
                    for (auto& p : clones[static_cast<size_t>(w)]->params()) p.tensor.zero_grad();
                }
                for (int w = 0; w < t_used; ++w)
                    threads.emplace_back([&, w] {
                        for (int b = w; b < n_batch; b += t_used) {
                            const WeatherSample& sample =
                                data.train[static_cast<size_t>(order[beg + static_cast<size_t>(b)])];
                            int cid = random_label_assign(sample, cfg.seed, epoch, cfg.random_label);
                            stats[static_cast<size_t>(b)] = detail::grad_sample(
                                *clones[static_cast<size_t>(w)], sample, cid, cfg.random_label, cfg.lambda_cls);
                        }
                    });
                for (auto& th : threads) th.join();
                for (int w = 0; w < t_used; ++w) {
                    ParamList cp = clones[static_cast<size_t>(w)]->params();
                    for (size_t i = 0; i < params.size(); ++i) {
                        if (!cp[i].tensor.has_grad()) continue;
                        auto& dst = params[i].tensor.grad();
                        const auto& src = cp[i].tensor.grad();
                        for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                    }
                }
            }

            double inv_n = 1.0 / static_cast<double>(n_batch);
            for (auto& p : params)
                if (p.tensor.has_grad())
                    for (double& g : p.tensor.grad()) g *= inv_n;
            opt_cfg.lr = cfg.lr_at(epoch);
            adam_step(params, opt, opt_cfg, &frozen, &lr_scale);

            for (const auto& st : stats) {
                sum_l1 += st.l1;
                sum_ce += st.ce;
                kind_total[static_cast<size_t>(st.label)] += 1;
                if (st.cls_correct) kind_hit[static_cast<size_t>(st.label)] += 1;
                routing_items.push_back({st.label, st.gate_sums});
            }
        }

        EpochReport rep;
        rep.epoch = epoch;
        rep.mean_l1 = sum_l1 / static_cast<double>(data.train.size());
        rep.mean_ce = sum_ce / static_cast<double>(data.train.size());
        for (int k = 0; k < kNumWeatherKinds; ++k)
            rep.accuracy[static_cast<size_t>(k)] =
                kind_total[static_cast<size_t>(k)] ? static_cast<double>(kind_hit[static_cast<size_t>(k)]) /
                                                         kind_total[static_cast<size_t>(k)]
                                                   : 0.0;
        rep.routing = routing_scores(routing_items, model.cfg.num_experts);
        if (csv.is_open()) {
            detail::write_epoch_csv_row(csv, rep);
            csv.flush();
        }
        result.reports.push_back(rep);
        result.epochs_done = epoch + 1;

        if (!ckpt_path.empty()) save_checkpoint(ckpt_path, training_checkpoint(model, opt, epoch + 1));
    }

    if (!cfg.out_dir.empty())
        save_checkpoint((fs::path(cfg.out_dir) / "ckpt_final.mowe").string(),
                        training_checkpoint(model, opt, result.epochs_done));
    for (auto& p : params) p.tensor.set_requires_grad(false);
    return result;
}

}  // namespace mowe
