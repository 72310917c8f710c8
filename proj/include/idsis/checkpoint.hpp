#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace idsis {

// Single-file checkpoint: a JSON manifest followed by named tensors.
// Tensor names are "<scope>/<parameter path>", e.g. "gen/stem.weight".
struct Checkpoint {
    nlohmann::json manifest = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;

    void put_module(const std::string& scope, const torch::nn::Module& module);
    // Copies stored values into the module; every parameter and buffer must be present.
    void load_module(const std::string& scope, torch::nn::Module& module) const;
    bool has_scope(const std::string& scope) const;
    const torch::Tensor& at(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Order-stable hash of every parameter value in a module.
std::string module_hash(const torch::nn::Module& module);

}  // namespace idsis
