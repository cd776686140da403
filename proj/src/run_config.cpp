#include "ivaloc/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace ivaloc {

namespace {

template <class T, class Parse>
void read_opt(const KeyValues& kv, const char* key, T& dst, Parse parse) {
    if (auto it = kv.find(key); it != kv.end()) dst = static_cast<T>(parse(it->second, key));
}

const KeyValues& run_defaults() {
    static const KeyValues kv = {
        {"run.seed", "0"},        {"run.jobs", "1"},        {"run.variant", "full"},
        {"run.n_folds", "10"},    {"run.stratified", "true"}, {"run.fold", "0"},
        {"run.threshold", "0.5"}, {"run.n_trials", "10"},   {"model.width_divisor", "1"},
    };
    return kv;
}

// Keys derived from run.seed rather than set directly.
bool derived_key(const std::string& key) { return key == "train.seed" || key == "synth.seed"; }

}  // namespace

void write_preprocess(const PreprocessConfig& c, KeyValues& kv) {
    kv["preprocess.target_duration_s"] = format_double(c.target_duration_s);
    kv["preprocess.cutoff_hz"] = format_double(c.cutoff_hz);
    kv["preprocess.filter_order"] = std::to_string(c.filter_order);
    kv["preprocess.target_fs_hz"] = format_double(c.target_fs_hz);
    kv["preprocess.zscore_epsilon"] = format_double(c.zscore_epsilon);
}

PreprocessConfig read_preprocess(const KeyValues& kv) {
    PreprocessConfig c;
    read_opt(kv, "preprocess.target_duration_s", c.target_duration_s, parse_double);
    read_opt(kv, "preprocess.cutoff_hz", c.cutoff_hz, parse_double);
    read_opt(kv, "preprocess.filter_order", c.filter_order, parse_int);
    read_opt(kv, "preprocess.target_fs_hz", c.target_fs_hz, parse_double);
    read_opt(kv, "preprocess.zscore_epsilon", c.zscore_epsilon, parse_double);
    return c;
}

void write_synth(const SynthConfig& c, KeyValues& kv) {
    kv["synth.n_records"] = std::to_string(c.n_records);
    kv["synth.class_ratio"] = format_double(c.class_ratio);
    kv["synth.fs_hz"] = format_double(c.fs_hz);
    kv["synth.duration_min_s"] = format_double(c.duration_min_s);
    kv["synth.duration_max_s"] = format_double(c.duration_max_s);
    kv["synth.noise_std"] = format_double(c.noise_std);
    kv["synth.separation"] = format_double(c.separation);
    kv["synth.seed"] = std::to_string(c.seed);
}

SynthConfig read_synth(const KeyValues& kv) {
    SynthConfig c;
    read_opt(kv, "synth.n_records", c.n_records, parse_uint);
    read_opt(kv, "synth.class_ratio", c.class_ratio, parse_double);
    read_opt(kv, "synth.fs_hz", c.fs_hz, parse_double);
    read_opt(kv, "synth.duration_min_s", c.duration_min_s, parse_double);
    read_opt(kv, "synth.duration_max_s", c.duration_max_s, parse_double);
    read_opt(kv, "synth.noise_std", c.noise_std, parse_double);
    read_opt(kv, "synth.separation", c.separation, parse_double);
    read_opt(kv, "synth.seed", c.seed, parse_uint);
    return c;
}

const std::vector<std::string>& RunConfig::known_keys() {
    static const std::vector<std::string> keys = [] {
        KeyValues kv = run_defaults();
        write_preprocess(PreprocessConfig{}, kv);
        ModelConfig{}.write(kv);
        TrainConfig{}.write(kv);
        write_synth(SynthConfig{}, kv);
        HyperparamSpace{}.write(kv);
        std::vector<std::string> out;
        for (const auto& [k, v] : kv)
            if (!derived_key(k)) out.push_back(k);
        return out;
    }();
    return keys;
}

void RunConfig::set(const std::string& key_in, const std::string& value) {
    const std::string key = trim(key_in);
    const auto& keys = known_keys();
    if (!std::binary_search(keys.begin(), keys.end(), key)) {
        if (derived_key(key)) throw ConfigError("config: " + key + " is derived from run.seed and cannot be set");
        throw ConfigError("config: unknown key '" + key + "'");
    }
    overrides_[key] = trim(value);
}

void RunConfig::load_text(std::string_view text, const std::string& origin) {
    std::istringstream in{std::string(text)};
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        for (std::size_t i = 1; i < line.size(); ++i) {
            if ((line[i] == '#' || line[i] == ';') && std::isspace(static_cast<unsigned char>(line[i - 1]))) {
                line.resize(i);
                break;
            }
        }
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(std::string_view(t).substr(0, eq));
        std::string value = trim(std::string_view(t).substr(eq + 1));
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        try {
            set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path.string());
}

std::string RunConfig::get(const std::string& key) const {
    if (auto it = overrides_.find(key); it != overrides_.end()) return it->second;
    return run_defaults().at(key);
}

std::uint64_t RunConfig::seed() const { return parse_uint(get("run.seed"), "run.seed"); }
std::size_t RunConfig::jobs() const { return std::max<std::size_t>(1, parse_uint(get("run.jobs"), "run.jobs")); }
std::size_t RunConfig::n_folds() const { return parse_uint(get("run.n_folds"), "run.n_folds"); }
bool RunConfig::stratified() const { return parse_bool(get("run.stratified"), "run.stratified"); }
std::size_t RunConfig::fold() const { return parse_uint(get("run.fold"), "run.fold"); }
double RunConfig::threshold() const { return parse_double(get("run.threshold"), "run.threshold"); }
std::size_t RunConfig::n_trials() const { return parse_uint(get("run.n_trials"), "run.n_trials"); }

AblationVariant RunConfig::variant() const {
    const auto v = parse_variant(get("run.variant"));
    if (!v) throw ConfigError("run.variant: expected vgg, vgg-lstm1, vgg-bilstm1, vgg-bilstm2 or full");
    return *v;
}

PreprocessConfig RunConfig::preprocess() const { return read_preprocess(overrides_); }

ModelConfig RunConfig::model() const {
    const std::size_t divisor = parse_uint(get("model.width_divisor"), "model.width_divisor");
    if (divisor == 0 || 64 % divisor != 0) throw ConfigError("model.width_divisor must divide 64");
    std::size_t length = preprocess().output_length();
    read_opt(overrides_, "model.input_length", length, parse_uint);
    ModelConfig base = divisor == 1 ? ModelConfig{} : ModelConfig::width_reduced(divisor, length);
    base.input_length = length;
    if (divisor == 1 && length != 1250) base.required_encoding = std::nullopt;
    KeyValues kv;
    base.write(kv);
    for (const auto& [k, v] : overrides_)
        if (k.rfind("model.", 0) == 0 && k != "model.width_divisor") kv[k] = v;
    return ModelConfig::read(kv);
}

TrainConfig RunConfig::train() const {
    TrainConfig c = TrainConfig::read(overrides_);
    c.seed = seed();
    return c;
}

SynthConfig RunConfig::synth() const {
    SynthConfig c = read_synth(overrides_);
    c.seed = derive_seed(seed(), 2);
    return c;
}

HyperparamSpace RunConfig::search_space() const {
    HyperparamSpace s = HyperparamSpace::read(overrides_);
    if (!overrides_.count("search.input_length")) s.input_length = model().input_length;
    return s;
}

std::uint64_t RunConfig::fold_seed() const { return derive_seed(seed(), 1); }

KeyValues RunConfig::resolved() const {
    KeyValues kv;
    kv["run.seed"] = std::to_string(seed());
    kv["run.jobs"] = std::to_string(jobs());
    kv["run.variant"] = std::string(variant_name(variant()));
    kv["run.n_folds"] = std::to_string(n_folds());
    kv["run.stratified"] = stratified() ? "true" : "false";
    kv["run.fold"] = std::to_string(fold());
    kv["run.threshold"] = format_double(threshold());
    kv["run.n_trials"] = std::to_string(n_trials());
    kv["model.width_divisor"] = get("model.width_divisor");
    write_preprocess(preprocess(), kv);
    model().write(kv);
    train().write(kv);
    write_synth(synth(), kv);
    search_space().write(kv);
    return kv;
}

void RunConfig::validate() const {
    const auto kv = resolved();
    preprocess().validate(synth().fs_hz);
    const ModelConfig m = model();
    m.validate();
    if (m.input_length != preprocess().output_length())
        throw ConfigError("config: model.input_length " + std::to_string(m.input_length) +
                          " does not match the preprocessed length " + std::to_string(preprocess().output_length()));
    train().validate();
    synth().validate();
    search_space().validate();
    if (n_folds() < 3) throw ConfigError("run.n_folds must be at least 3");
    if (fold() >= n_folds()) throw ConfigError("run.fold must be below run.n_folds");
    if (!(threshold() >= 0.0 && threshold() <= 1.0)) throw ConfigError("run.threshold must lie in [0, 1]");
    if (n_trials() == 0) throw ConfigError("run.n_trials must be positive");
}

std::string to_ini(const KeyValues& kv, const std::function<bool(const std::string&)>& commented) {
    std::string out, section;
    for (const auto& [k, v] : kv) {
        const auto dot = k.find('.');
        const std::string s = dot == std::string::npos ? "" : k.substr(0, dot);
        if (s != section || out.empty()) {
            if (!out.empty()) out += '\n';
            out += "[" + s + "]\n";
            section = s;
        }
        if (commented && commented(k)) out += "# ";
        out += k.substr(dot + 1) + " = " + v + "\n";
    }
    return out;
}

std::string RunConfig::text() const { return to_ini(resolved(), derived_key); }

std::string RunConfig::hash() const {
    KeyValues kv = resolved();
    kv.erase("run.jobs");
    return hash_hex(to_text(kv));
}

}  // namespace ivaloc
