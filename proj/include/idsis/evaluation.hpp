#pragma once

#include <torch/torch.h>

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "idsis/data.hpp"
#include "idsis/identity_net.hpp"
#include "idsis/training.hpp"

namespace idsis::eval {

// Sum in a balanced tree so the result does not depend on how work was chunked.
double pairwise_sum(const std::vector<double>& values);
double pairwise_mean(const std::vector<double>& values);

// Everything the protocol needs about a fixed record set, computed once.
struct RecordBank {
    torch::Tensor images;           // (N, 3, H, W)
    torch::Tensor onehot;           // (N, C, H, W)
    torch::Tensor id_embeddings;    // (N, d_id) train-FR
    torch::Tensor styles;           // (N, C, d_s)
    torch::Tensor eval_embeddings;  // (N, d_eval) eval-FR of the real images
    std::vector<std::uint32_t> identity;
    std::vector<std::string> names;

    std::size_t size() const { return identity.size(); }
};

RecordBank make_bank(train::SynthesisModel& model, const fr::FREmbedder& train_fr, const fr::ImageEmbedder& eval_fr,
                     const std::vector<data::FaceRecord>& records);

struct CosineSuite {
    double mean = 0.0;
    std::vector<double> scores;
};

// Reconstructs every record with its own mask, styles and identity; scores under eval-FR.
CosineSuite cosine_suite(train::SynthesisModel& model, const RecordBank& bank, const fr::ImageEmbedder& eval_fr);

struct IndexPair {
    std::size_t first = 0;
    std::size_t second = 0;
};

// Pairs of records with different identities, sampled with a fixed seed.
// Returns every such pair (in index order) when count is at least the number available.
std::vector<IndexPair> sample_impostor_pairs(const std::vector<std::uint32_t>& identity, std::size_t count,
                                             std::uint64_t seed);

std::vector<double> impostor_scores(const RecordBank& bank, const std::vector<IndexPair>& pairs);

// Smallest impostor score t with |{s > t}| / n <= far_target.
double calibrate_threshold(const std::vector<double>& impostor_scores, double far_target = 0.01);
std::size_t minimum_impostor_pairs(double far_target);

// first = attacker (mask, styles), second = target (identity).
using AttackPair = IndexPair;

std::vector<AttackPair> sample_attack_pairs(const std::vector<std::uint32_t>& identity, std::size_t count,
                                            std::uint64_t seed);

enum class SwapSet { NoSwap, Skin, Eyes, Eyebrows, Mouth, Hair, FullSwap };

const std::vector<SwapSet>& all_swap_sets();
std::string swap_set_name(SwapSet set);
SwapSet parse_swap_set(const std::string& name);
// Toy classes whose style is taken from the target.
std::vector<int> swap_classes(SwapSet set, int classes);

// Style matrix (B, C, d_s): attacker codes with the listed classes replaced by the target's.
torch::Tensor compose_styles(const RecordBank& bank, const std::vector<AttackPair>& pairs,
                             const std::vector<int>& target_classes);

// Generates G(m_attacker, styles, identity). identity_from_target selects whose train-FR embedding is used.
torch::Tensor generate_pairs(train::SynthesisModel& model, const RecordBank& bank, const std::vector<AttackPair>& pairs,
                             const std::vector<int>& target_classes, bool identity_from_target);

struct AttackResult {
    double asr = 0.0;
    double tau = 0.0;
    std::vector<double> target_scores;    // cos(eval(x_hat), eval(x_target)), decides success
    std::vector<double> attacker_scores;  // cos(eval(x_hat), eval(x_attacker)), literal formula variant
    std::vector<bool> success;
};

AttackResult attack_success_rate(train::SynthesisModel& model, const RecordBank& bank,
                                 const std::vector<AttackPair>& pairs, const fr::ImageEmbedder& eval_fr, double tau,
                                 SwapSet swap = SwapSet::NoSwap);

// Fraction of scores strictly above tau.
double success_fraction(const std::vector<double>& scores, double tau);

// LPIPS-style: channel-normalized trunk features, squared difference summed over channels,
// averaged over positions and layers. One value per image pair.
std::vector<double> perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, const fr::ImageEmbedder& net);
double perceptual_distance(const data::Image& a, const data::Image& b, const fr::ImageEmbedder& net);

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

// Rows are samples; unbiased covariance.
Moments fit_moments(const Eigen::MatrixXd& features);
double frechet_from_moments(const Moments& a, const Moments& b);
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
// Pooled features of both image sets under `embedder`.
double frechet_feature_distance(const torch::Tensor& real, const torch::Tensor& fake,
                                const fr::ImageEmbedder& embedder);
Eigen::MatrixXd to_matrix(const torch::Tensor& features);

struct SweepRow {
    SwapSet set = SwapSet::NoSwap;
    double asr = 0.0;
    double perceptual_distance = 0.0;
};

std::vector<SweepRow> style_swap_sweep(train::SynthesisModel& model, const RecordBank& bank,
                                       const std::vector<AttackPair>& pairs, const fr::ImageEmbedder& eval_fr,
                                       double tau, const fr::ImageEmbedder& feat_net);

struct PixelDifference {
    double identity_swap = 0.0;  // mean |own - identity swapped|
    double full_swap = 0.0;      // mean |own - full style swap|
};

PixelDifference pixel_difference_study(train::SynthesisModel& model, const RecordBank& bank,
                                       const std::vector<AttackPair>& pairs);

struct RowAblation {
    int row = 0;
    double mean_delta = 0.0;
    double sign_consistency = 0.0;  // share of probes whose delta has the majority sign
};

// Zeroes one conditioning row at a time on identity-swap probes and records the change in
// cos(eval(x_hat), eval(x_target)).
std::vector<RowAblation> row_ablation_study(train::SynthesisModel& model, const RecordBank& bank,
                                            const std::vector<AttackPair>& pairs, const fr::ImageEmbedder& eval_fr);

struct RegionMass {
    double mass_fraction = 0.0;  // share of the token's attention mass inside the region
    double area_fraction = 0.0;  // share of pixels inside the region
};

// Identity-token attention mass inside the union of `classes`, averaged over records and blocks.
RegionMass attention_region_mass(train::SynthesisModel& model, const RecordBank& bank, int token,
                                 const std::vector<int>& classes);

}  // namespace idsis::eval
