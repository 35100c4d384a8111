#include "sara/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace sara {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& text, const char* expected) {
    throw ConfigError("invalid value '" + text + "' for " + key + " (expected " + expected + ")");
}

// Unsigned integers, decimal or 0x-prefixed hex; other types are specialized below.
template <class V>
V parse_value(const std::string& key, const std::string& text) {
    static_assert(std::is_unsigned_v<V>);
    V v = 0;
    const bool hex = text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X');
    const char* first = text.data() + (hex ? 2 : 0);
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v, hex ? 16 : 10);
    if (ec != std::errc() || ptr != last || first == last) bad_value(key, text, "a non-negative integer");
    return v;
}

template <>
double parse_value<double>(const std::string& key, const std::string& text) {
    double v = 0;
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), last, v);
    if (ec != std::errc() || ptr != last || text.empty()) bad_value(key, text, "a number");
    return v;
}

template <>
bool parse_value<bool>(const std::string& key, const std::string& text) {
    if (text == "true" || text == "yes" || text == "on" || text == "1") return true;
    if (text == "false" || text == "no" || text == "off" || text == "0") return false;
    bad_value(key, text, "true or false");
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& text) {
    return text;
}

template <>
DType parse_value<DType>(const std::string& key, const std::string& text) {
    try {
        return dtype_from_string(text);
    } catch (const Error&) {
        bad_value(key, text, "f32 or f64");
    }
}

template <>
DatasetMode parse_value<DatasetMode>(const std::string& key, const std::string& text) {
    try {
        return dataset_mode_from_string(text);
    } catch (const Error&) {
        bad_value(key, text, "gaussian-mixture or structured-grid");
    }
}

template <>
std::vector<std::size_t> parse_value<std::vector<std::size_t>>(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_value<std::size_t>(key, trim(item)));
    return out;
}

std::string format_value(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
std::string format_value(DType v) { return to_string(v); }
std::string format_value(DatasetMode v) { return to_string(v); }
std::string format_value(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

struct Field {
    std::string key;
    std::function<std::string(const Config&)> get;
    std::function<void(Config&, const std::string&)> set;
};

template <class F>
Field make_field(std::string key, F ref) {
    using V = std::remove_cvref_t<decltype(ref(std::declval<Config&>()))>;
    Field f;
    f.key = key;
    f.get = [ref](const Config& c) {
        if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
            return std::to_string(ref(const_cast<Config&>(c)));
        } else {
            return format_value(ref(const_cast<Config&>(c)));
        }
    };
    f.set = [ref, key](Config& c, const std::string& text) { ref(c) = parse_value<V>(key, text); };
    return f;
}

#define SARA_FIELD(key, expr) make_field(key, [](Config& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> all = [] {
        std::vector<Field> f = {
            SARA_FIELD("run.seed", train.seed),
            SARA_FIELD("run.steps", train.steps),
            SARA_FIELD("run.batch_size", train.batch_size),
            SARA_FIELD("run.label_dropout", train.label_dropout),
            SARA_FIELD("run.disc_every", train.disc_every),
            SARA_FIELD("run.checkpoint_every", train.checkpoint_every),
            SARA_FIELD("run.dtype", train.dtype),
            SARA_FIELD("run.deterministic_metrics", train.deterministic_metrics),
            SARA_FIELD("run.output_root", output_root),
            SARA_FIELD("dataset.mode", train.dataset.mode),
            SARA_FIELD("dataset.channels", train.dataset.channels),
            SARA_FIELD("dataset.height", train.dataset.height),
            SARA_FIELD("dataset.width", train.dataset.width),
            SARA_FIELD("dataset.num_classes", train.dataset.num_classes),
            SARA_FIELD("dataset.patch_size", train.dataset.patch_size),
            SARA_FIELD("dataset.seed", train.dataset.seed),
            SARA_FIELD("dataset.mean_scale", train.dataset.mean_scale),
            SARA_FIELD("dataset.std_min", train.dataset.std_min),
            SARA_FIELD("dataset.std_max", train.dataset.std_max),
            SARA_FIELD("dataset.noise_std", train.dataset.noise_std),
            SARA_FIELD("dataset.amp_jitter", train.dataset.amp_jitter),
            SARA_FIELD("denoiser.layers", train.denoiser.layers),
            SARA_FIELD("denoiser.hidden_dim", train.denoiser.hidden_dim),
            SARA_FIELD("denoiser.heads", train.denoiser.heads),
            SARA_FIELD("denoiser.patch_size", train.denoiser.patch_size),
            SARA_FIELD("denoiser.alignment_depth", train.denoiser.alignment_depth),
            SARA_FIELD("denoiser.mlp_ratio", train.denoiser.mlp_ratio),
            SARA_FIELD("denoiser.freq_dim", train.denoiser.freq_dim),
            SARA_FIELD("encoder.layers", train.encoder.layers),
            SARA_FIELD("encoder.dim", train.encoder.dim),
            SARA_FIELD("encoder.heads", train.encoder.heads),
            SARA_FIELD("encoder.mlp_ratio", train.encoder.mlp_ratio),
            SARA_FIELD("encoder.seed", train.encoder.seed),
            SARA_FIELD("projection.hidden", train.projection.hidden),
            SARA_FIELD("discriminator.channels", train.discriminator.channels),
            SARA_FIELD("alignment.lambda", train.alignment.lambda),
            SARA_FIELD("alignment.beta", train.alignment.beta),
            SARA_FIELD("alignment.gamma", train.alignment.gamma),
            SARA_FIELD("alignment.patch", train.alignment.patch),
            SARA_FIELD("alignment.structural", train.alignment.structural),
            SARA_FIELD("alignment.adversarial", train.alignment.adversarial),
            SARA_FIELD("alignment.cosine_eps", train.alignment.cosine_eps),
            SARA_FIELD("optimizer.lr", train.gen_optimizer.lr),
            SARA_FIELD("optimizer.beta1", train.gen_optimizer.beta1),
            SARA_FIELD("optimizer.beta2", train.gen_optimizer.beta2),
            SARA_FIELD("optimizer.eps", train.gen_optimizer.eps),
            SARA_FIELD("optimizer.weight_decay", train.gen_optimizer.weight_decay),
            SARA_FIELD("disc_optimizer.lr", train.disc_optimizer.lr),
            SARA_FIELD("disc_optimizer.beta1", train.disc_optimizer.beta1),
            SARA_FIELD("disc_optimizer.beta2", train.disc_optimizer.beta2),
            SARA_FIELD("disc_optimizer.eps", train.disc_optimizer.eps),
            SARA_FIELD("disc_optimizer.weight_decay", train.disc_optimizer.weight_decay),
            SARA_FIELD("sampler.nfe", sampler.nfe),
            SARA_FIELD("sampler.cfg_scale", sampler.cfg_scale),
            SARA_FIELD("sampler.interval_lo", sampler.interval_lo),
            SARA_FIELD("sampler.interval_hi", sampler.interval_hi),
            SARA_FIELD("sampler.seed", sampler.seed),
            SARA_FIELD("sampler.deterministic_final_step", sampler.deterministic_final_step),
            SARA_FIELD("sampler.diffusion_scale", sampler.diffusion_scale),
            SARA_FIELD("diagnostics.t_probe", report.t_probe),
            SARA_FIELD("diagnostics.eval_size", report.eval_size),
            SARA_FIELD("diagnostics.eval_batch", report.eval_batch),
            SARA_FIELD("diagnostics.eval_seed", report.eval_seed),
            SARA_FIELD("diagnostics.ref_patches", report.ref_patches),
            SARA_FIELD("diagnostics.corrmap_images", report.corrmap_images),
            SARA_FIELD("diagnostics.raw_hidden", report.raw_hidden),
        };
        return f;
    }();
    return all;
}

#undef SARA_FIELD

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

bool is_train_key(const std::string& key) {
    return !key.starts_with("sampler.") && !key.starts_with("diagnostics.") && key != "run.output_root";
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& source) {
    std::vector<ConfigEntry> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw, section;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& msg) { throw ConfigError(source + ":" + std::to_string(line_no) + ": " + msg); };
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) fail("empty section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail("missing key before '='");
        if (!value.empty() && value.front() == '"') {
            const auto close = value.find('"', 1);
            if (close == std::string::npos) fail("unterminated quoted value");
            const std::string rest = trim(value.substr(close + 1));
            if (!rest.empty() && rest[0] != '#' && rest[0] != ';') fail("trailing characters after quoted value");
            value = value.substr(1, close - 1);
        } else {
            const auto hash = value.find_first_of("#;");
            if (hash != std::string::npos) value = trim(value.substr(0, hash));
        }
        if (section.empty()) fail("key '" + key + "' appears before any [section]");
        const std::string full = section + "." + key;
        if (!seen.insert(full).second) fail("duplicate key " + full);
        out.push_back({full, value, line_no});
    }
    return out;
}

void apply_setting(Config& cfg, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key " + key);
    f->set(cfg, value);
    cfg.present.insert(key);
}

Config config_from_text(const std::string& text, const std::string& source) {
    Config cfg;
    for (const auto& e : parse_config_text(text, source)) {
        try {
            apply_setting(cfg, e.key, e.value);
        } catch (const ConfigError& err) {
            throw ConfigError(source + ":" + std::to_string(e.line) + ": " + err.what());
        }
    }
    return cfg;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_text(ss.str(), path.string());
}

void apply_overrides(Config& cfg, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override '" + o + "' must look like section.key=value");
        apply_setting(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
}

std::map<std::string, std::string> to_key_values(const Config& cfg, bool train_only) {
    std::map<std::string, std::string> out;
    for (const auto& f : fields()) {
        if (train_only && !is_train_key(f.key)) continue;
        out[f.key] = f.get(cfg);
    }
    return out;
}

std::string to_config_text(const Config& cfg) {
    std::string out, section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string sec = f.key.substr(0, dot);
        if (sec != section) {
            out += (section.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        const std::string v = f.get(cfg);
        const bool quote = v.empty() || v.find_first_of("#; ") != std::string::npos;
        out += f.key.substr(dot + 1) + " = " + (quote ? "\"" + v + "\"" : v) + "\n";
    }
    return out;
}

std::vector<std::string> known_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

TrainConfig train_config_from(const std::map<std::string, std::string>& kv) {
    Config cfg;
    for (const auto& [k, v] : kv) apply_setting(cfg, k, v);
    cfg.train.sync();
    return cfg.train;
}

}  // namespace sara
