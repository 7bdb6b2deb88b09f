// mowe: desk-scale multi-weather restoration workbench.
//
// Subcommands: gen-data, train, eval, route-analyze, grad-check,
// metric-sweep. Exit codes: 0 success, 2 config/input error, 3 numerical
// failure.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "mowe/gradsuite.hpp"
#include "mowe/mowe.hpp"
#include "mowe/sweep.hpp"

namespace fs = std::filesystem;
using namespace mowe;

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string preset;
    std::string router;
    uint64_t seed = 0;
    bool seed_set = false;
    bool no_random_label = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "run configuration file (key=value with [sections])");
    cmd->add_option("--seed", flags.seed, "override the run seed")->each([&](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--preset", flags.preset, "model preset: tiny, n4-k0 or n16-k4")
        ->check(CLI::IsMember({"tiny", "n4-k0", "n16-k4"}));
    cmd->add_option("--router", flags.router, "router kind: plain or weather")
        ->check(CLI::IsMember({"plain", "weather"}));
    cmd->add_flag("--no-random-label", flags.no_random_label, "disable the random-label strategy for Mix");
}

RunConfig resolve_config(const CommonFlags& flags) {
    RunConfig rc;
    if (!flags.config_path.empty()) rc = parse_run_config(flags.config_path);
    if (flags.seed_set) {
        rc.seed = flags.seed;
        rc.dataset_seed_set = false;
        rc.train_seed_set = false;
    }
    if (!flags.out_dir.empty()) {
        rc.out_dir = flags.out_dir;
        rc.dataset.out_dir.clear();
        rc.train.out_dir.clear();
    }
    if (!flags.preset.empty()) {
        ModelConfig fresh = model_preset(flags.preset);
        // explicit [model] keys from the config file still apply on top
        for (const auto& kv : rc.model_overrides) fresh.apply_kv(kv.first, kv.second);
        rc.model_preset = flags.preset;
        rc.model = fresh;
    }
    if (!flags.router.empty()) rc.model.router = router_from_name(flags.router);
    if (flags.no_random_label) rc.train.random_label = false;
    finalize_run_config(rc);
    return rc;
}

RecognitionModel obtain_recognition(const RunConfig& rc) {
    std::string cache = (fs::path(rc.out_dir) / "recognition.mowe").string();
    if (fs::exists(cache)) return recognition_from_checkpoint(load_checkpoint(cache));
    RecognitionTrainConfig rcfg;
    rcfg.scenes = rc.recognition.scenes;
    rcfg.height = rc.recognition.height;
    rcfg.width = rc.recognition.width;
    rcfg.seed = rc.recognition.seed;
    rcfg.epochs = rc.recognition.epochs;
    rcfg.lr = rc.recognition.lr;
    rcfg.feat_channels = rc.recognition.feat_channels;
    std::cout << "training recognition model (" << rcfg.scenes << " scenes, " << rcfg.epochs << " epochs)...\n";
    auto result = train_recognition_model(rcfg);
    std::cout << "recognition train pixel accuracy: " << result.train_accuracy << "\n";
    fs::create_directories(rc.out_dir);
    save_checkpoint(cache, recognition_to_checkpoint(result.model));
    return result.model;
}

void check_config_checkpoint_match(const RunConfig& rc, const Checkpoint& ckpt) {
    for (const auto& kv : rc.model_overrides) {
        const std::string* stored = ckpt.find_meta("model." + kv.first);
        if (!stored) continue;
        // normalize both via a config round-trip so 2.0 == 2.000000 etc.
        ModelConfig a, b;
        a.apply_kv(kv.first, kv.second);
        b.apply_kv(kv.first, *stored);
        std::string va, vb;
        for (const auto& e : a.to_kv())
            if (e.first == kv.first) va = e.second;
        for (const auto& e : b.to_kv())
            if (e.first == kv.first) vb = e.second;
        if (va != vb)
            throw ParamError("checkpoint/config mismatch at model." + kv.first + ": config=" + kv.second +
                             " checkpoint=" + *stored);
    }
}

DatasetSplit load_dataset_or_fail(const std::string& manifest) {
    if (!fs::exists(manifest))
        throw ParamError("dataset manifest not found: " + manifest + " (run gen-data first)");
    return load_dataset(manifest);
}

int cmd_gen_data(const CommonFlags& flags) {
    RunConfig rc = resolve_config(flags);
    DatasetConfig dc = rc.dataset;
    dc.write_files = true;
    DatasetSplit split = build_dataset(dc);
    int counts[kNumWeatherKinds] = {0};
    for (const auto* s : split.all()) counts[static_cast<size_t>(s->label)] += 1;
    std::cout << "dataset written to " << dc.out_dir << "\n";
    for (int k = 0; k < kNumWeatherKinds; ++k)
        std::cout << "  " << weather_name(static_cast<WeatherKind>(k)) << ": " << counts[k] << "\n";
    std::cout << "splits: train=" << split.train.size() << " val=" << split.val.size()
              << " test=" << split.test.size() << "\n";
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    RunConfig rc = resolve_config(flags);
    DatasetSplit data = load_dataset_or_fail((fs::path(rc.dataset.out_dir) / "manifest.txt").string());
    if (rc.model.height != rc.dataset.height || rc.model.width != rc.dataset.width) {
        rc.model.height = rc.dataset.height;
        rc.model.width = rc.dataset.width;
        rc.model.validate();
    }
    MoweModel model(rc.model, derive_seed(rc.seed, "model-init"));
    std::cout << "training " << rc.model_preset << " (" << rc.model.num_experts << " experts, top-"
              << rc.model.top_k << ", " << router_name(rc.model.router) << " router) for " << rc.train.epochs
              << " epochs on " << data.train.size() << " samples\n";
    TrainResult result = train(model, data, rc.train);
    if (!result.reports.empty()) {
        const auto& last = result.reports.back();
        std::cout << "final train l1=" << last.mean_l1 << " ce=" << last.mean_ce << "\n";
    }
    std::cout << "checkpoint: " << (fs::path(rc.train.out_dir) / "ckpt_final.mowe").string() << "\n";
    std::cout << "epoch report: " << (fs::path(rc.train.out_dir) / "epochs.csv").string() << "\n";
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& ckpt_path, const std::string& data_manifest,
             bool passthrough) {
    RunConfig rc = resolve_config(flags);
    std::string manifest = data_manifest.empty()
                               ? (fs::path(rc.dataset.out_dir) / "manifest.txt").string()
                               : data_manifest;
    DatasetSplit data = load_dataset_or_fail(manifest);
    std::vector<const WeatherSample*> test;
    for (const auto& s : data.test) test.push_back(&s);
    if (test.empty()) throw ParamError("eval: test split is empty");

    RecognitionModel recognition = obtain_recognition(rc);

    MetricReport report;
    if (passthrough) {
        report = evaluate_samples(nullptr, test, &recognition, rc.eval_gamma, true);
    } else {
        if (ckpt_path.empty()) throw ParamError("eval: --checkpoint required (or pass --passthrough)");
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        check_config_checkpoint_match(rc, ckpt);
        MoweModel model = model_from_checkpoint(ckpt);
        report = evaluate_samples(&model, test, &recognition, rc.eval_gamma, false);
    }

    fs::create_directories(rc.out_dir);
    std::string csv_path = (fs::path(rc.out_dir) / "metrics.csv").string();
    std::ofstream csv(csv_path);
    write_metric_csv(csv, report);
    static const char* headline[] = {"derain", "dehaze", "desnow", "clear", "mixed"};
    for (WeatherKind k : {WeatherKind::Rain, WeatherKind::Fog, WeatherKind::Snow, WeatherKind::Clear,
                          WeatherKind::Mix})
        std::cout << headline[static_cast<int>(k)] << ": psnr=" << report.mean_psnr[static_cast<size_t>(k)]
                  << " ssim=" << report.mean_ssim[static_cast<size_t>(k)]
                  << " m_pa=" << report.mean_mpa[static_cast<size_t>(k)] << "\n";
    std::cout << "average: psnr=" << report.overall_psnr << " ssim=" << report.overall_ssim
              << " m_pa=" << report.overall_mpa << "\n";
    std::cout << "metrics: " << csv_path << "\n";
    return 0;
}

int cmd_route_analyze(const CommonFlags& flags, const std::string& ckpt_path, const std::string& data_manifest) {
    RunConfig rc = resolve_config(flags);
    if (ckpt_path.empty()) throw ParamError("route-analyze: --checkpoint required");
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    check_config_checkpoint_match(rc, ckpt);
    MoweModel model = model_from_checkpoint(ckpt);
    std::string manifest = data_manifest.empty()
                               ? (fs::path(rc.dataset.out_dir) / "manifest.txt").string()
                               : data_manifest;
    DatasetSplit data = load_dataset_or_fail(manifest);
    std::vector<const WeatherSample*> test;
    for (const auto& s : data.test) test.push_back(&s);
    if (test.empty()) throw ParamError("route-analyze: test split is empty");

    auto table = routing_table(model, test);
    fs::create_directories(rc.out_dir);
    std::string csv_path = (fs::path(rc.out_dir) / "routing.csv").string();
    std::ofstream csv(csv_path);
    write_routing_csv(csv, table);
    std::cout << "mean routing divergence (pairwise JSD): " << mean_routing_divergence(table) << "\n";
    std::cout << "routing table: " << csv_path << "\n";
    return 0;
}

int cmd_grad_check(int seeds) {
    auto cases = run_gradient_suite(seeds);
    bool all_pass = true;
    for (const auto& c : cases) {
        std::cout << (c.pass ? "pass" : "FAIL") << "  " << c.name << "  max_rel_err=" << c.max_err
                  << " (tol " << c.tol << ")\n";
        all_pass = all_pass && c.pass;
    }
    if (!all_pass) throw NumericError("gradient check failed");
    return 0;
}

int cmd_metric_sweep(const CommonFlags& flags) {
    RunConfig rc = resolve_config(flags);
    RecognitionModel recognition = obtain_recognition(rc);
    auto rows = run_metric_sweep(rc.sweep, recognition, rc.eval_gamma);
    fs::create_directories(rc.out_dir);
    std::string csv_path = (fs::path(rc.out_dir) / "metric_sweep.csv").string();
    std::ofstream csv(csv_path);
    write_sweep_csv(csv, rows);
    auto corr = sweep_correlations(rows);
    std::cout << "spearman(m_pa, pixel_err) = " << corr.mpa_vs_err.rho << "\n";
    std::cout << "spearman(psnr, pixel_err) = " << corr.psnr_vs_err.rho << "\n";
    std::cout << "sweep: " << csv_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mowe: mixture-of-weather-experts restoration workbench"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, route_flags, sweep_flags;
    std::string eval_ckpt, eval_data, route_ckpt, route_data;
    bool eval_passthrough = false;
    int grad_seeds = 20;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-weather dataset");
    add_common_flags(gen, gen_flags);

    auto* tr = app.add_subcommand("train", "train the restoration model");
    add_common_flags(tr, train_flags);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (PSNR / SSIM / M_pa)");
    add_common_flags(ev, eval_flags);
    ev->add_option("--checkpoint", eval_ckpt, "model checkpoint to evaluate");
    ev->add_option("--data", eval_data, "dataset manifest (defaults to the configured dataset)");
    ev->add_flag("--passthrough", eval_passthrough, "score the degraded images themselves (identity restorer)");

    auto* ra = app.add_subcommand("route-analyze", "aggregate per-weather routing scores");
    add_common_flags(ra, route_flags);
    ra->add_option("--checkpoint", route_ckpt, "model checkpoint");
    ra->add_option("--data", route_data, "dataset manifest");

    auto* gc = app.add_subcommand("grad-check", "finite-difference check of every differentiable op");
    gc->add_option("--seeds", grad_seeds, "random seeds per op")->check(CLI::PositiveNumber);

    auto* ms = app.add_subcommand("metric-sweep", "M_pa vs degradation intensity sweep");
    add_common_flags(ms, sweep_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_flags);
        if (tr->parsed()) return cmd_train(train_flags);
        if (ev->parsed()) return cmd_eval(eval_flags, eval_ckpt, eval_data, eval_passthrough);
        if (ra->parsed()) return cmd_route_analyze(route_flags, route_ckpt, route_data);
        if (gc->parsed()) return cmd_grad_check(grad_seeds);
        if (ms->parsed()) return cmd_metric_sweep(sweep_flags);
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
