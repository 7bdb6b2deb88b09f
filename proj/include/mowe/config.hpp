// Plain-text key=value run configuration with [section] headers. Every key
// is validated against the schema below; unknown sections or keys are
// rejected with the offending name.
#pragma once

#include <fstream>
#include <set>
#include <sstream>

#include "mowe/train.hpp"
#include "mowe/weather.hpp"

namespace mowe {

struct SweepConfig {
    int scenes = 5;
    int levels = 5;
    int height = 32;
    int width = 32;
    uint64_t seed = 2000;
};

struct RecognitionSettings {
    int scenes = 30;
    int epochs = 60;
    double lr = 5e-3;
    int feat_channels = 12;
    uint64_t seed = 77;
    int height = 32;
    int width = 32;
};

struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "out";

    DatasetConfig dataset;
    std::string model_preset = "tiny";
    ModelConfig model;
    std::vector<std::pair<std::string, std::string>> model_overrides;  // explicit [model] keys
    TrainConfig train;
    double eval_gamma = 1.0;
    RecognitionSettings recognition;
    SweepConfig sweep;

    bool dataset_seed_set = false;
    bool train_seed_set = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int to_int(const std::string& section, const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParamError("config: " + section + "." + key + " expects an integer, got '" + v + "'");
    }
}

inline double to_double(const std::string& section, const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParamError("config: " + section + "." + key + " expects a number, got '" + v + "'");
    }
}

inline uint64_t to_u64(const std::string& section, const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ParamError("config: " + section + "." + key + " expects an unsigned integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& section, const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ParamError("config: " + section + "." + key + " expects a boolean, got '" + v + "'");
}

}  // namespace detail

inline void apply_config_entry(RunConfig& rc, const std::string& section, const std::string& key,
                               const std::string& value) {
    using detail::to_bool;
    using detail::to_double;
    using detail::to_int;
    using detail::to_u64;
    if (section == "run") {
        if (key == "seed") rc.seed = to_u64(section, key, value);
        else if (key == "out") rc.out_dir = value;
        else throw ParamError("config: unknown key run." + key);
    } else if (section == "dataset") {
        if (key == "count_per_kind") {
            int v = to_int(section, key, value);
            if (v < 1) throw ParamError("config: dataset.count_per_kind must be >= 1, got " + value);
            rc.dataset.count_per_kind = v;
        } else if (key == "height") rc.dataset.height = to_int(section, key, value);
        else if (key == "width") rc.dataset.width = to_int(section, key, value);
        else if (key == "seed") {
            rc.dataset.seed = to_u64(section, key, value);
            rc.dataset_seed_set = true;
        } else if (key == "intensity") {
            double v = to_double(section, key, value);
            if (v <= 0) throw ParamError("config: dataset.intensity must be positive, got " + value);
            rc.dataset.intensity = v;
        } else if (key == "dir") rc.dataset.out_dir = value;
        else throw ParamError("config: unknown key dataset." + key);
    } else if (section == "model") {
        if (key == "preset") {
            rc.model_preset = value;
            rc.model = model_preset(value);
        } else {
            try {
                rc.model.apply_kv(key, value);
            } catch (const ParamError&) {
                throw ParamError("config: unknown key model." + key);
            }
            rc.model_overrides.emplace_back(key, value);
        }
    } else if (section == "train") {
        if (key == "lr") rc.train.lr = to_double(section, key, value);
        else if (key == "beta1") rc.train.beta1 = to_double(section, key, value);
        else if (key == "beta2") rc.train.beta2 = to_double(section, key, value);
        else if (key == "eps") rc.train.eps = to_double(section, key, value);
        else if (key == "lr_schedule") {
            if (value == "constant") rc.train.lr_schedule = LrSchedule::Constant;
            else if (value == "cosine") rc.train.lr_schedule = LrSchedule::Cosine;
            else throw ParamError("config: train.lr_schedule expects constant or cosine, got '" + value + "'");
        } else if (key == "lr_min_factor") rc.train.lr_min_factor = to_double(section, key, value);
        else if (key == "batch_size") rc.train.batch_size = to_int(section, key, value);
        else if (key == "epochs") rc.train.epochs = to_int(section, key, value);
        else if (key == "lambda_cls") rc.train.lambda_cls = to_double(section, key, value);
        else if (key == "cls_lr_factor") rc.train.cls_lr_factor = to_double(section, key, value);
        else if (key == "seed") {
            rc.train.seed = to_u64(section, key, value);
            rc.train_seed_set = true;
        } else if (key == "random_label") rc.train.random_label = to_bool(section, key, value);
        else if (key == "grad_workers") rc.train.grad_workers = to_int(section, key, value);
        else if (key == "cls_freeze_epoch") rc.train.cls_freeze_epoch = to_int(section, key, value);
        else if (key == "resume") rc.train.resume = to_bool(section, key, value);
        else throw ParamError("config: unknown key train." + key);
    } else if (section == "eval") {
        if (key == "gamma") rc.eval_gamma = to_double(section, key, value);
        else if (key == "rec_scenes") rc.recognition.scenes = to_int(section, key, value);
        else if (key == "rec_epochs") rc.recognition.epochs = to_int(section, key, value);
        else if (key == "rec_lr") rc.recognition.lr = to_double(section, key, value);
        else if (key == "rec_feat") rc.recognition.feat_channels = to_int(section, key, value);
        else if (key == "rec_seed") rc.recognition.seed = to_u64(section, key, value);
        else if (key == "rec_height") rc.recognition.height = to_int(section, key, value);
        else if (key == "rec_width") rc.recognition.width = to_int(section, key, value);
        else throw ParamError("config: unknown key eval." + key);
    } else if (section == "sweep") {
        if (key == "scenes") rc.sweep.scenes = to_int(section, key, value);
        else if (key == "levels") rc.sweep.levels = to_int(section, key, value);
        else if (key == "height") rc.sweep.height = to_int(section, key, value);
        else if (key == "width") rc.sweep.width = to_int(section, key, value);
        else if (key == "seed") rc.sweep.seed = to_u64(section, key, value);
        else throw ParamError("config: unknown key sweep." + key);
    } else {
        throw ParamError("config: unknown section [" + section + "]");
    }
}

inline RunConfig parse_run_config_text(const std::string& text) {
    RunConfig rc;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ParamError("config: malformed section header at line " + std::to_string(lineno));
            section = t.substr(1, t.size() - 2);
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ParamError("config: expected key=value at line " + std::to_string(lineno) + ": " + t);
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        if (section.empty()) throw ParamError("config: key '" + key + "' appears before any [section]");
        apply_config_entry(rc, section, key, value);
    }
    return rc;
}

inline RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParamError("config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_run_config_text(buf.str());
}

// seeds cascade from the run seed unless a section pinned its own
inline void finalize_run_config(RunConfig& rc) {
    if (!rc.dataset_seed_set) rc.dataset.seed = rc.seed;
    if (!rc.train_seed_set) rc.train.seed = rc.seed;
    if (rc.dataset.out_dir.empty()) rc.dataset.out_dir = rc.out_dir + "/dataset";
    if (rc.train.out_dir.empty()) rc.train.out_dir = rc.out_dir + "/train";
    rc.model.validate();
    rc.train.validate();
}

}  // namespace mowe
