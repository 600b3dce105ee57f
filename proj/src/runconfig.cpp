#include "tokshift/runconfig.hpp"

#include <cctype>
#include <fstream>
#include <map>
#include <set>

namespace tokshift {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int64_t x = std::stoll(v, &used);
        TS_CONFIG_CHECK(used == v.size(), "key '", key, "': trailing characters in '", v, "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError(cat("key '", key, "': '", v, "' is not an integer"));
    }
}

// accepts decimals ("0.25") and rationals ("1/4")
double parse_real(const std::string& key, const std::string& v) {
    const size_t slash = v.find('/');
    try {
        if (slash != std::string::npos) {
            const double num = std::stod(v.substr(0, slash));
            const double den = std::stod(v.substr(slash + 1));
            TS_CONFIG_CHECK(den != 0.0, "key '", key, "': division by zero in '", v, "'");
            return num / den;
        }
        size_t used = 0;
        double x = std::stod(v, &used);
        TS_CONFIG_CHECK(used == v.size(), "key '", key, "': trailing characters in '", v, "'");
        return x;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError(cat("key '", key, "': '", v, "' is not a number"));
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(cat("key '", key, "': '", v, "' is not a boolean"));
}

std::vector<int64_t> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    if (trim(v).empty()) return out;
    size_t pos = 0;
    while (pos <= v.size()) {
        size_t comma = v.find(',', pos);
        const std::string item = trim(v.substr(pos, comma == std::string::npos ? std::string::npos
                                                                               : comma - pos));
        out.push_back(parse_int(key, item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

void apply_preset(ModelConfig& m, const std::string& key, const std::string& v) {
    std::string s;
    for (char c : v) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == "base-16" || s == "base16") {
        const ModelConfig b = ModelConfig::base16();
        m.patch = b.patch;
        m.embed_dim = b.embed_dim;
        m.depth = b.depth;
        m.heads = b.heads;
    } else if (s == "large-16" || s == "large16") {
        const ModelConfig b = ModelConfig::large16();
        m.patch = b.patch;
        m.embed_dim = b.embed_dim;
        m.depth = b.depth;
        m.heads = b.heads;
    } else {
        throw ConfigError(cat("key '", key, "': unknown preset '", v,
                              "' (expected Base-16 or Large-16)"));
    }
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
        pos = (nl == std::string::npos) ? text.size() + 1 : nl + 1;
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        TS_CONFIG_CHECK(eq != std::string::npos, "line ", line_no, ": expected key=value, got '",
                        line, "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        TS_CONFIG_CHECK(!key.empty(), "line ", line_no, ": empty key");
        TS_CONFIG_CHECK(!kv.count(key), "duplicate key '", key, "'");
        kv[key] = value;
    }

    RunConfig rc;
    // preset first so explicit keys can override it regardless of file order
    if (kv.count("preset")) apply_preset(rc.model, "preset", kv.at("preset"));

    const std::set<std::string> known = {
        "preset",      "frames",      "height",      "width",       "patch",
        "embed_dim",   "depth",       "heads",       "mlp_ratio",   "classes",
        "literal_eq23", "shift_variant", "frac_back", "frac_forth",  "placement",
        "epochs",      "base_lr",     "momentum",    "decay_factor", "milestones",
        "batch_size",  "train_clips", "val_clips",   "sample_step", "views",
        "crops",       "square",      "speed",       "noise_std",   "crop_margin",
        "seed",        "out_dir"};
    for (const auto& [key, value] : kv)
        TS_CONFIG_CHECK(known.count(key), "unknown key '", key, "'");

    auto geti = [&](const char* key, int64_t& into) {
        if (kv.count(key)) into = parse_int(key, kv.at(key));
    };
    auto getr = [&](const char* key, double& into) {
        if (kv.count(key)) into = parse_real(key, kv.at(key));
    };

    ModelConfig& m = rc.model;
    geti("frames", m.frames);
    geti("height", m.height);
    geti("width", m.width);
    geti("patch", m.patch);
    geti("embed_dim", m.embed_dim);
    geti("depth", m.depth);
    geti("heads", m.heads);
    geti("mlp_ratio", m.mlp_ratio);
    geti("classes", m.classes);
    if (kv.count("literal_eq23")) m.literal_eq23 = parse_bool("literal_eq23", kv.at("literal_eq23"));
    if (kv.count("shift_variant"))
        m.shift.variant = shift_variant_from_string(kv.at("shift_variant"));
    getr("frac_back", m.shift.frac_back);
    getr("frac_forth", m.shift.frac_forth);
    if (kv.count("placement")) m.shift.placement = shift_placement_from_string(kv.at("placement"));

    TrainSchedule& s = rc.schedule;
    geti("epochs", s.epochs);
    getr("base_lr", s.base_lr);
    getr("momentum", s.momentum);
    getr("decay_factor", s.decay_factor);
    if (kv.count("milestones")) s.milestones = parse_int_list("milestones", kv.at("milestones"));
    geti("batch_size", s.batch_size);
    geti("train_clips", s.train_clips);
    geti("val_clips", s.val_clips);

    SamplingSpec& sp = rc.sampling;
    geti("sample_step", sp.step);
    geti("views", sp.views);
    geti("crops", sp.crops);

    SyntheticTask& t = rc.task;
    geti("square", t.square);
    geti("speed", t.speed);
    getr("noise_std", t.noise_std);
    geti("crop_margin", t.crop_margin);

    if (kv.count("seed")) {
        const int64_t s64 = parse_int("seed", kv.at("seed"));
        TS_CONFIG_CHECK(s64 >= 0, "seed must be >= 0");
        rc.seed = static_cast<uint64_t>(s64);
    }
    if (kv.count("out_dir")) rc.out_dir = kv.at("out_dir");
    TS_CONFIG_CHECK(!rc.out_dir.empty(), "out_dir must not be empty");

    // task mirrors the model's clip geometry
    t.frames = m.frames;
    t.height = m.height;
    t.width = m.width;
    t.seed = rc.seed;
    sp.frames = m.frames;

    m.validate();
    s.validate();
    sp.validate();
    return rc;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    TS_CONFIG_CHECK(in.good(), "cannot open config file ", path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_run_config_text(text);
}

}  // namespace tokshift
