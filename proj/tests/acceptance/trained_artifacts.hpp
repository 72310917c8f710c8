#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "idsis/data.hpp"
#include "idsis/identity_net.hpp"
#include "idsis/training.hpp"

namespace idsis::acceptance {

// The toy-scale setup shared by the trained criteria: 150 identities at 64x64,
// one train-FR, one eval-FR and two 20k-iteration models that differ only in lambda_id.
struct TrainedSetup {
    data::DataConfig data;
    fr::FREmbedderConfig train_fr;
    fr::FREmbedderConfig eval_fr;
    train::TrainConfig with_id;
    train::TrainConfig without_id;

    static TrainedSetup defaults();
};

struct TrainedArtifacts {
    std::vector<data::FaceRecord> train_records;
    std::vector<data::FaceRecord> test_records;
    fr::FREmbedder train_fr;
    fr::FREmbedder eval_fr;
    std::filesystem::path with_id;     // model.ckpt, lambda_id = 10
    std::filesystem::path without_id;  // model.ckpt, lambda_id = 0
};

// Loads every artifact from `root` whose stored key matches the setup, training the rest.
// Interrupted generator runs resume from their newest iteration checkpoint.
TrainedArtifacts ensure_trained(const std::filesystem::path& root, const TrainedSetup& setup, std::ostream& log);

}  // namespace idsis::acceptance
