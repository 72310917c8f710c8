#include "idsis/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "idsis/errors.hpp"
#include "idsis/hashing.hpp"

namespace idsis::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Binding {
    ConfigKey key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

[[noreturn]] void bad_value(const std::string& key, const std::string& type, const std::string& value) {
    throw ConfigError("config key '" + key + "' expects " + type + ", got '" + value + "'");
}

template <class T>
T parse_integer(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, "an integer", value);
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) bad_value(key, "a real number", value);
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, "a real number", value);
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    bad_value(key, "a boolean", value);
}

template <class T>
Binding integer(const std::string& name, T RunConfig::*field, const std::string& doc) {
    return {{name, "int", doc},
            [=](RunConfig& c, const std::string& v) { c.*field = parse_integer<T>(name, v); },
            [=](const RunConfig& c) { return std::to_string(c.*field); }};
}

Binding real(const std::string& name, double RunConfig::*field, const std::string& doc) {
    return {{name, "real", doc},
            [=](RunConfig& c, const std::string& v) { c.*field = parse_real(name, v); },
            [=](const RunConfig& c) { return format_real(c.*field); }};
}

Binding boolean(const std::string& name, bool RunConfig::*field, const std::string& doc) {
    return {{name, "bool", doc},
            [=](RunConfig& c, const std::string& v) { c.*field = parse_bool(name, v); },
            [=](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

Binding text(const std::string& name, std::string RunConfig::*field, const std::string& doc) {
    return {{name, "string", doc},
            [=](RunConfig& c, const std::string& v) { c.*field = v; },
            [=](const RunConfig& c) { return c.*field; }};
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table{
        text("output_dir", &RunConfig::output_dir, "root of all command outputs"),
        text("data_dir", &RunConfig::data_dir, "dataset root (default <output_dir>/data)"),
        text("checkpoint_dir", &RunConfig::checkpoint_dir, "checkpoint root (default <output_dir>/checkpoints)"),
        text("layout", &RunConfig::layout, "dataset layout: toy or external-mask-dir"),
        integer("seed", &RunConfig::seed, "dataset and generator-training seed (IDSIS_SEED overrides the config file)"),
        integer("resolution", &RunConfig::resolution, "image side in pixels"),
        integer("classes", &RunConfig::classes, "semantic class count C"),
        integer("identities", &RunConfig::identities, "toy identity count"),
        integer("variations", &RunConfig::variations, "toy records per identity"),
        boolean("disjoint_identities", &RunConfig::disjoint_identities, "split by identity rather than by record"),
        real("fr_train_width", &RunConfig::fr_train_width, "train-FR channel multiplier"),
        integer("fr_train_depth", &RunConfig::fr_train_depth, "train-FR stride-2 stages"),
        integer("fr_train_seed", &RunConfig::fr_train_seed, "train-FR initialization seed"),
        real("fr_eval_width", &RunConfig::fr_eval_width, "eval-FR channel multiplier"),
        integer("fr_eval_depth", &RunConfig::fr_eval_depth, "eval-FR stride-2 stages"),
        integer("fr_eval_seed", &RunConfig::fr_eval_seed, "eval-FR initialization seed"),
        integer("fr_epochs", &RunConfig::fr_epochs, "FR training epochs"),
        integer("fr_batch", &RunConfig::fr_batch, "FR batch size"),
        real("fr_lr", &RunConfig::fr_lr, "FR peak learning rate"),
        real("fr_min_accuracy", &RunConfig::fr_min_accuracy, "FR training-accuracy quality gate"),
        real("fr_min_separation", &RunConfig::fr_min_separation, "required genuine minus impostor cosine on the test split"),
        integer("d_id", &RunConfig::d_id, "identity embedding dimension"),
        integer("d_s", &RunConfig::d_s, "style code dimension"),
        integer("gen_base_channels", &RunConfig::gen_base_channels, "generator channels at the first stage"),
        integer("gen_min_channels", &RunConfig::gen_min_channels, "generator channel floor"),
        integer("gen_convs_per_stage", &RunConfig::gen_convs_per_stage, "conv blocks after each upsample"),
        integer("heads", &RunConfig::heads, "cross-attention heads"),
        boolean("self_attention", &RunConfig::self_attention, "add spatial self-attention before each cross-attention"),
        integer("disc_base_channels", &RunConfig::disc_base_channels, "discriminator channels at the first layer"),
        integer("mask_hidden", &RunConfig::mask_hidden, "mask embedder hidden width"),
        integer("style_channels", &RunConfig::style_channels, "style encoder trunk channels"),
        real("lambda_fm", &RunConfig::lambda_fm, "feature matching weight"),
        real("lambda_prc", &RunConfig::lambda_prc, "perceptual weight"),
        real("lambda_id", &RunConfig::lambda_id, "identity preservation weight"),
        integer("perceptual_layers", &RunConfig::perceptual_layers, "train-FR trunk stages used by the perceptual loss (0 = all)"),
        real("lr_g", &RunConfig::lr_g, "generator-side learning rate"),
        real("lr_d", &RunConfig::lr_d, "discriminator learning rate"),
        real("beta1", &RunConfig::beta1, "Adam beta1"),
        real("beta2", &RunConfig::beta2, "Adam beta2"),
        integer("batch", &RunConfig::batch, "training batch size"),
        integer("iterations", &RunConfig::iterations, "training iterations"),
        integer("checkpoint_every", &RunConfig::checkpoint_every, "iterations between checkpoints"),
        integer("log_every", &RunConfig::log_every, "iterations between metric records"),
        real("far_target", &RunConfig::far_target, "false acceptance rate used to calibrate tau"),
        integer("impostor_pairs", &RunConfig::impostor_pairs, "impostor pairs for calibration"),
        integer("attack_pairs", &RunConfig::attack_pairs, "attacker/target pairs"),
        integer("eval_seed", &RunConfig::eval_seed, "seed for pair sampling"),
    };
    return table;
}

const Binding& binding_for(const std::string& key) {
    for (const auto& b : bindings()) {
        if (b.key.name == key) return b;
    }
    std::string msg = "unknown config key '" + key + "'";
    const auto suggestion = suggest_key(key);
    if (!suggestion.empty()) msg += "; did you mean '" + suggestion + "'?";
    msg += " Valid keys:";
    for (const auto& b : bindings()) msg += " " + b.key.name;
    throw ConfigError(msg);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& b : bindings()) out.push_back(b.key);
        return out;
    }();
    return keys;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1);
    std::vector<std::size_t> cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

std::string suggest_key(const std::string& unknown) {
    std::string best;
    std::size_t best_d = std::max<std::size_t>(3, unknown.size() / 3) + 1;
    for (const auto& b : bindings()) {
        const auto d = edit_distance(unknown, b.key.name);
        if (d < best_d) {
            best_d = d;
            best = b.key.name;
        }
    }
    return best;
}

void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    binding_for(key).set(cfg, value);
}

std::string get_value(const RunConfig& cfg, const std::string& key) { return binding_for(key).get(cfg); }

RunConfig parse_config_text(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(number) + " is not 'key = value': " + line);
        }
        set_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

RunConfig load_config_file(const fs::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config_text(buffer.str(), std::move(base));
}

RunConfig resolve_config(const fs::path* file, const std::map<std::string, std::string>& overrides,
                         const char* seed_env) {
    RunConfig cfg;
    if (file != nullptr) cfg = load_config_file(*file, cfg);
    if (seed_env != nullptr && *seed_env != '\0') set_value(cfg, "seed", seed_env);
    for (const auto& [key, value] : overrides) {
        std::string name = key;
        std::replace(name.begin(), name.end(), '-', '_');
        set_value(cfg, name, value);
    }
    return cfg;
}

fs::path RunConfig::output_path() const { return output_dir; }
fs::path RunConfig::data_path() const { return data_dir.empty() ? output_path() / "data" : fs::path(data_dir); }
fs::path RunConfig::checkpoint_path() const {
    return checkpoint_dir.empty() ? output_path() / "checkpoints" : fs::path(checkpoint_dir);
}
fs::path RunConfig::fr_path(fr::Role role) const { return checkpoint_path() / (fr::role_name(role) + "_fr.ckpt"); }
fs::path RunConfig::model_dir() const { return checkpoint_path() / "model"; }
fs::path RunConfig::model_path() const { return model_dir() / "model.ckpt"; }

data::DataConfig RunConfig::data_config() const {
    data::DataConfig d;
    d.resolution = resolution;
    d.classes = classes;
    d.identity_count = identities;
    d.variations = variations;
    d.seed = seed;
    d.disjoint_identities = disjoint_identities;
    return d;
}

fr::FREmbedderConfig RunConfig::fr_config(fr::Role role) const {
    fr::FREmbedderConfig c = fr::default_fr_config(role);
    c.width = role == fr::Role::Train ? fr_train_width : fr_eval_width;
    c.depth = role == fr::Role::Train ? fr_train_depth : fr_eval_depth;
    c.seed = role == fr::Role::Train ? fr_train_seed : fr_eval_seed;
    c.epochs = fr_epochs;
    c.batch = fr_batch;
    c.lr = fr_lr;
    c.min_accuracy = fr_min_accuracy;
    c.embedding_dim = d_id;
    c.resolution = resolution;
    return c;
}

train::TrainConfig RunConfig::train_config() const {
    train::TrainConfig t;
    t.model = train::ModelConfig::make(resolution, classes, d_s, d_id);
    t.model.encoder.mask_hidden = mask_hidden;
    t.model.encoder.style_channels = style_channels;
    t.model.generator.base_channels = gen_base_channels;
    t.model.generator.min_channels = gen_min_channels;
    t.model.generator.convs_per_stage = gen_convs_per_stage;
    t.model.generator.heads = heads;
    t.model.generator.self_attention = self_attention;
    t.model.discriminator.base_channels = disc_base_channels;
    t.weights = {lambda_fm, lambda_prc, lambda_id};
    t.perceptual_layers = perceptual_layers;
    t.lr_g = lr_g;
    t.lr_d = lr_d;
    t.beta1 = beta1;
    t.beta2 = beta2;
    t.batch = batch;
    t.iterations = iterations;
    t.checkpoint_every = checkpoint_every;
    t.log_every = log_every;
    t.seed = seed;
    return t;
}

json RunConfig::to_json() const {
    json j = json::object();
    for (const auto& b : bindings()) j[b.key.name] = b.get(*this);
    return j;
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

}  // namespace idsis::cli
