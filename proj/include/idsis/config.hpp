#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "idsis/data.hpp"
#include "idsis/identity_net.hpp"
#include "idsis/training.hpp"

namespace idsis::cli {

struct RunConfig {
    // paths; empty data/checkpoint dirs resolve under output_dir
    std::string output_dir = "run";
    std::string data_dir;
    std::string checkpoint_dir;
    std::string layout = "toy";

    // data
    std::uint64_t seed = 0;
    int resolution = 64;
    int classes = data::kToyClassCount;
    int identities = 150;
    int variations = 10;
    bool disjoint_identities = true;

    // face recognition
    double fr_train_width = 1.0;
    int fr_train_depth = 4;
    std::uint64_t fr_train_seed = 1;
    double fr_eval_width = 0.75;
    int fr_eval_depth = 4;
    std::uint64_t fr_eval_seed = 2;
    int fr_epochs = 40;
    int fr_batch = 32;
    double fr_lr = 2e-3;
    double fr_min_accuracy = 0.9;
    double fr_min_separation = 0.2;
    int d_id = 128;

    // model
    int d_s = 64;
    int gen_base_channels = 48;
    int gen_min_channels = 16;
    int gen_convs_per_stage = 1;
    int heads = 1;
    bool self_attention = false;
    int disc_base_channels = 24;
    int mask_hidden = 256;
    int style_channels = 32;

    // training
    double lambda_fm = 10.0;
    double lambda_prc = 10.0;
    double lambda_id = 10.0;
    int perceptual_layers = 2;
    double lr_g = 1e-4;
    double lr_d = 4e-4;
    double beta1 = 0.0;
    double beta2 = 0.999;
    int batch = 16;
    int iterations = 20000;
    int checkpoint_every = 1000;
    int log_every = 100;

    // evaluation
    double far_target = 0.01;
    int impostor_pairs = 2000;
    int attack_pairs = 500;
    std::uint64_t eval_seed = 7;

    std::filesystem::path output_path() const;
    std::filesystem::path data_path() const;
    std::filesystem::path checkpoint_path() const;
    std::filesystem::path fr_path(fr::Role role) const;
    std::filesystem::path model_dir() const;
    std::filesystem::path model_path() const;

    data::DataConfig data_config() const;
    fr::FREmbedderConfig fr_config(fr::Role role) const;
    train::TrainConfig train_config() const;

    nlohmann::json to_json() const;
    // sha256 of the canonical JSON form.
    std::string hash() const;
};

struct ConfigKey {
    std::string name;
    std::string type;  // int, real, bool, string
    std::string doc;
};

const std::vector<ConfigKey>& config_keys();

// Assigns one key from its text form; throws ConfigError for unknown keys (with a suggestion)
// and for values that do not parse as the key's type.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& key);

// key = value lines; '#' starts a comment. Later lines win.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {});

// Resolves file, then IDSIS_SEED, then flag overrides (keys with '-' or '_').
RunConfig resolve_config(const std::filesystem::path* file, const std::map<std::string, std::string>& overrides,
                         const char* seed_env);

// Closest key by edit distance, or empty when nothing is close.
std::string suggest_key(const std::string& unknown);

std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace idsis::cli
