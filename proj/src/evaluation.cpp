#include "idsis/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "idsis/errors.hpp"
#include "idsis/tensor_util.hpp"

namespace idsis::eval {

namespace F = torch::nn::functional;

namespace {

constexpr std::int64_t kChunk = 50;

double sum_range(const double* begin, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += begin[i];
        return s;
    }
    const std::size_t half = n / 2;
    return sum_range(begin, half) + sum_range(begin + half, n - half);
}

std::vector<double> to_vector(const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kFloat64).contiguous();
    return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

torch::Tensor index_tensor(const std::vector<AttackPair>& pairs, bool second) {
    std::vector<std::int64_t> idx;
    idx.reserve(pairs.size());
    for (const auto& p : pairs) idx.push_back(static_cast<std::int64_t>(second ? p.second : p.first));
    return torch::tensor(idx, torch::kLong);
}

torch::Tensor embed_chunked(const fr::ImageEmbedder& net, const torch::Tensor& images) {
    std::vector<torch::Tensor> out;
    for (std::int64_t s = 0; s < images.size(0); s += kChunk) {
        out.push_back(net.embed(images.slice(0, s, std::min(s + kChunk, images.size(0)))));
    }
    return torch::cat(out);
}

// Row-wise cosine of two (B, d) matrices of unit vectors, in double.
std::vector<double> row_cosines(const torch::Tensor& a, const torch::Tensor& b) {
    const auto x = a.to(torch::kFloat64);
    const auto y = b.to(torch::kFloat64);
    const auto cos = (x * y).sum(1) / (x.norm(2, 1) * y.norm(2, 1)).clamp_min(1e-300);
    return to_vector(cos.clamp(-1.0, 1.0));
}

void check_pairs(const RecordBank& bank, const std::vector<AttackPair>& pairs) {
    if (pairs.empty()) throw ValidationError("no attack pairs");
    for (const auto& p : pairs) {
        if (p.first >= bank.size() || p.second >= bank.size()) throw ValidationError("attack pair index out of range");
        if (bank.identity[p.first] == bank.identity[p.second]) {
            throw ValidationError("attacker and target share identity " + std::to_string(bank.identity[p.first]));
        }
    }
}

}  // namespace

double pairwise_sum(const std::vector<double>& values) { return sum_range(values.data(), values.size()); }

double pairwise_mean(const std::vector<double>& values) {
    if (values.empty()) throw ValidationError("mean of an empty set");
    return pairwise_sum(values) / static_cast<double>(values.size());
}

RecordBank make_bank(train::SynthesisModel& model, const fr::FREmbedder& train_fr, const fr::ImageEmbedder& eval_fr,
                     const std::vector<data::FaceRecord>& records) {
    if (records.empty()) throw ValidationError("evaluation needs at least one record");
    torch::NoGradGuard no_grad;
    model->eval();
    RecordBank bank;
    const int classes = model->config().encoder.classes;
    bank.images = images_to_tensor(std::span<const data::FaceRecord>(records));
    for (const auto& r : records) {
        bank.identity.push_back(r.identity_id);
        bank.names.push_back(r.name);
    }
    bank.onehot = masks_to_onehot(std::span<const data::FaceRecord>(records), classes);
    bank.id_embeddings = embed_chunked(train_fr, bank.images);
    bank.eval_embeddings = embed_chunked(eval_fr, bank.images);
    std::vector<torch::Tensor> styles;
    for (std::int64_t s = 0; s < bank.images.size(0); s += kChunk) {
        const auto e = std::min(s + kChunk, bank.images.size(0));
        styles.push_back(model->styles(bank.images.slice(0, s, e), bank.onehot.slice(0, s, e)).codes);
    }
    bank.styles = torch::cat(styles);
    return bank;
}

CosineSuite cosine_suite(train::SynthesisModel& model, const RecordBank& bank, const fr::ImageEmbedder& eval_fr) {
    if (bank.size() == 0) throw ValidationError("cosine suite needs at least one record");
    torch::NoGradGuard no_grad;
    model->eval();
    CosineSuite suite;
    for (std::int64_t s = 0; s < static_cast<std::int64_t>(bank.size()); s += kChunk) {
        const auto e = std::min<std::int64_t>(s + kChunk, static_cast<std::int64_t>(bank.size()));
        const auto tokens = enc::assemble_token_batch(bank.styles.slice(0, s, e),
                                                      model->identity_tokens(bank.id_embeddings.slice(0, s, e)));
        const auto fake = model->generate(bank.onehot.slice(0, s, e), tokens).image;
        const auto scores = row_cosines(eval_fr.embed(fake), bank.eval_embeddings.slice(0, s, e));
        suite.scores.insert(suite.scores.end(), scores.begin(), scores.end());
    }
    suite.mean = pairwise_mean(suite.scores);
    return suite;
}

std::vector<IndexPair> sample_impostor_pairs(const std::vector<std::uint32_t>& identity, std::size_t count,
                                             std::uint64_t seed) {
    std::vector<IndexPair> all;
    for (std::size_t i = 0; i < identity.size(); ++i) {
        for (std::size_t j = i + 1; j < identity.size(); ++j) {
            if (identity[i] != identity[j]) all.push_back({i, j});
        }
    }
    if (all.empty()) throw ValidationError("impostor pairs need at least two identities");
    if (count >= all.size()) return all;
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    std::sort(all.begin(), all.end(),
              [](const IndexPair& a, const IndexPair& b) { return std::tie(a.first, a.second) < std::tie(b.first, b.second); });
    return all;
}

std::vector<double> impostor_scores(const RecordBank& bank, const std::vector<IndexPair>& pairs) {
    const auto a = bank.eval_embeddings.index_select(0, index_tensor(pairs, false));
    const auto b = bank.eval_embeddings.index_select(0, index_tensor(pairs, true));
    return row_cosines(a, b);
}

std::size_t minimum_impostor_pairs(double far_target) {
    return static_cast<std::size_t>(std::ceil(1.0 / far_target - 1e-9));
}

double calibrate_threshold(const std::vector<double>& impostor_scores, double far_target) {
    if (!(far_target > 0.0 && far_target < 1.0)) {
        throw ValidationError("far_target must lie in (0, 1), got " + std::to_string(far_target));
    }
    const auto needed = minimum_impostor_pairs(far_target);
    if (impostor_scores.size() < needed) {
        throw ValidationError("calibrating at FAR " + std::to_string(far_target) + " needs at least " +
                              std::to_string(needed) + " impostor pairs, got " +
                              std::to_string(impostor_scores.size()));
    }
    std::vector<double> sorted = impostor_scores;
    for (double s : sorted) {
        if (!std::isfinite(s)) throw NumericError("non-finite impostor score");
    }
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i > 0 && sorted[i] == sorted[i - 1]) continue;
        const auto above = static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), sorted[i]));
        if (above / n <= far_target) return sorted[i];
    }
    return sorted.back();
}

std::vector<AttackPair> sample_attack_pairs(const std::vector<std::uint32_t>& identity, std::size_t count,
                                            std::uint64_t seed) {
    std::map<std::uint32_t, int> distinct;
    for (auto id : identity) distinct[id]++;
    if (distinct.size() < 2) throw ValidationError("attack pairs need at least two identities");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, identity.size() - 1);
    std::vector<AttackPair> pairs;
    pairs.reserve(count);
    while (pairs.size() < count) {
        const auto a = pick(rng);
        const auto t = pick(rng);
        if (identity[a] != identity[t]) pairs.push_back({a, t});
    }
    return pairs;
}

const std::vector<SwapSet>& all_swap_sets() {
    static const std::vector<SwapSet> sets{SwapSet::NoSwap, SwapSet::Skin,  SwapSet::Eyes,    SwapSet::Eyebrows,
                                           SwapSet::Mouth,  SwapSet::Hair,  SwapSet::FullSwap};
    return sets;
}

std::string swap_set_name(SwapSet set) {
    switch (set) {
        case SwapSet::NoSwap: return "NoSwap";
        case SwapSet::Skin: return "Skin";
        case SwapSet::Eyes: return "Eyes";
        case SwapSet::Eyebrows: return "Eyebrows";
        case SwapSet::Mouth: return "Mouth";
        case SwapSet::Hair: return "Hair";
        case SwapSet::FullSwap: return "FullSwap";
    }
    return "?";
}

SwapSet parse_swap_set(const std::string& name) {
    for (auto set : all_swap_sets()) {
        if (swap_set_name(set) == name) return set;
    }
    throw ValidationError("unknown swap set '" + name + "' (expected NoSwap, Skin, Eyes, Eyebrows, Mouth, Hair or FullSwap)");
}

std::vector<int> swap_classes(SwapSet set, int classes) {
    using data::ToyClass;
    if (set == SwapSet::NoSwap) return {};
    if (set == SwapSet::FullSwap) {
        std::vector<int> all(static_cast<std::size_t>(classes));
        for (int c = 0; c < classes; ++c) all[static_cast<std::size_t>(c)] = c;
        return all;
    }
    if (classes != data::kToyClassCount) {
        throw ValidationError("per-class swap sets need the toy class set");
    }
    ToyClass cls = ToyClass::Skin;
    switch (set) {
        case SwapSet::Skin: cls = ToyClass::Skin; break;
        case SwapSet::Eyes: cls = ToyClass::Eyes; break;
        case SwapSet::Eyebrows: cls = ToyClass::Eyebrows; break;
        case SwapSet::Mouth: cls = ToyClass::Mouth; break;
        case SwapSet::Hair: cls = ToyClass::Hair; break;
        default: break;
    }
    return {static_cast<int>(cls)};
}

torch::Tensor compose_styles(const RecordBank& bank, const std::vector<AttackPair>& pairs,
                             const std::vector<int>& target_classes) {
    auto styles = bank.styles.index_select(0, index_tensor(pairs, false)).clone();
    if (target_classes.empty()) return styles;
    const auto target = bank.styles.index_select(0, index_tensor(pairs, true));
    for (int c : target_classes) {
        if (c < 0 || c >= styles.size(1)) throw ValidationError("swap class " + std::to_string(c) + " out of range");
        styles.select(1, c).copy_(target.select(1, c));
    }
    return styles;
}

torch::Tensor generate_pairs(train::SynthesisModel& model, const RecordBank& bank, const std::vector<AttackPair>& pairs,
                             const std::vector<int>& target_classes, bool identity_from_target) {
    torch::NoGradGuard no_grad;
    model->eval();
    std::vector<torch::Tensor> out;
    for (std::size_t s = 0; s < pairs.size(); s += kChunk) {
        const std::vector<AttackPair> chunk(pairs.begin() + static_cast<std::ptrdiff_t>(s),
                                            pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), s + kChunk)));
        const auto attackers = index_tensor(chunk, false);
        const auto id_source = identity_from_target ? index_tensor(chunk, true) : attackers;
        const auto tokens = enc::assemble_token_batch(compose_styles(bank, chunk, target_classes),
                                                      model->identity_tokens(bank.id_embeddings.index_select(0, id_source)));
        out.push_back(model->generate(bank.onehot.index_select(0, attackers), tokens).image);
    }
    return torch::cat(out);
}

double success_fraction(const std::vector<double>& scores, double tau) {
    if (scores.empty()) throw ValidationError("no scores");
    std::size_t hits = 0;
    for (double s : scores) hits += s > tau ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

AttackResult attack_success_rate(train::SynthesisModel& model, const RecordBank& bank,
                                 const std::vector<AttackPair>& pairs, const fr::ImageEmbedder& eval_fr, double tau,
                                 SwapSet swap) {
    if (!(tau >= -1.0 && tau <= 1.0)) {
        throw ValidationError("tau must lie in [-1, 1], got " + std::to_string(tau));
    }
    check_pairs(bank, pairs);
    torch::NoGradGuard no_grad;
    const auto fake = generate_pairs(model, bank, pairs, swap_classes(swap, static_cast<int>(bank.styles.size(1))), true);
    const auto emb = embed_chunked(eval_fr, fake);
    AttackResult result;
    result.tau = tau;
    result.target_scores = row_cosines(emb, bank.eval_embeddings.index_select(0, index_tensor(pairs, true)));
    result.attacker_scores = row_cosines(emb, bank.eval_embeddings.index_select(0, index_tensor(pairs, false)));
    for (double s : result.target_scores) result.success.push_back(fr::verify_score(s, tau).accept);
    result.asr = success_fraction(result.target_scores, tau);
    return result;
}

std::vector<double> perceptual_distance(const torch::Tensor& a, const torch::Tensor& b, const fr::ImageEmbedder& net) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError("perceptual distance needs equal shapes, got " + c10::str(a.sizes()) + " and " +
                         c10::str(b.sizes()));
    }
    torch::NoGradGuard no_grad;
    std::vector<double> out;
    for (std::int64_t s = 0; s < a.size(0); s += kChunk) {
        const auto e = std::min(s + kChunk, a.size(0));
        const auto fa = net.feature_maps(a.slice(0, s, e));
        const auto fb = net.feature_maps(b.slice(0, s, e));
        auto total = torch::zeros({e - s}, torch::kFloat64);
        for (std::size_t l = 0; l < fa.size(); ++l) {
            const auto na = F::normalize(fa[l].to(torch::kFloat64), F::NormalizeFuncOptions().dim(1).eps(1e-10));
            const auto nb = F::normalize(fb[l].to(torch::kFloat64), F::NormalizeFuncOptions().dim(1).eps(1e-10));
            total += (na - nb).pow(2).sum(1).mean({1, 2});
        }
        const auto d = to_vector(total / static_cast<double>(fa.size()));
        out.insert(out.end(), d.begin(), d.end());
    }
    return out;
}

double perceptual_distance(const data::Image& a, const data::Image& b, const fr::ImageEmbedder& net) {
    return perceptual_distance(image_to_tensor(a).unsqueeze(0), image_to_tensor(b).unsqueeze(0), net).front();
}

Moments fit_moments(const Eigen::MatrixXd& features) {
    if (features.rows() < 2) {
        throw ValidationError("Frechet distance needs at least 2 samples per side, got " +
                              std::to_string(features.rows()));
    }
    if (!features.allFinite()) throw NumericError("non-finite features in Frechet distance");
    Moments m;
    m.mean = features.colwise().mean();
    const Eigen::MatrixXd centered = features.rowwise() - m.mean.transpose();
    m.cov = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
    return m;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
    Eigen::VectorXd values = solver.eigenvalues();
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = std::sqrt(std::max(values[i], 0.0));
    return solver.eigenvectors() * values.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double frechet_from_moments(const Moments& a, const Moments& b) {
    if (a.mean.size() != b.mean.size()) throw ShapeError("Frechet distance of features with different dimensions");
    // Tr((S1 S2)^1/2) = Tr((S1^1/2 S2 S1^1/2)^1/2), which is symmetric positive semi-definite.
    const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
    Eigen::MatrixXd inner = root_a * b.cov * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(inner, Eigen::EigenvaluesOnly);
    double trace_root = 0.0;
    for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i) {
        const double v = solver.eigenvalues()[i];
        if (v > 1e-6) trace_root += std::sqrt(v);
    }
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_root;
    if (!std::isfinite(d)) throw NumericError("Frechet distance is not finite");
    return std::max(d, 0.0);
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return frechet_from_moments(fit_moments(a), fit_moments(b));
}

Eigen::MatrixXd to_matrix(const torch::Tensor& features) {
    const auto t = features.detach().to(torch::kFloat64).contiguous();
    if (t.dim() != 2) throw ShapeError("feature matrix must be 2-d");
    Eigen::MatrixXd m(t.size(0), t.size(1));
    const double* p = t.data_ptr<double>();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = p[r * m.cols() + c];
    }
    return m;
}

double frechet_feature_distance(const torch::Tensor& real, const torch::Tensor& fake,
                                const fr::ImageEmbedder& embedder) {
    if (real.size(0) < 2 || fake.size(0) < 2) {
        throw ValidationError("Frechet distance needs at least 2 samples per side");
    }
    torch::NoGradGuard no_grad;
    auto pooled = [&](const torch::Tensor& images) {
        std::vector<torch::Tensor> out;
        for (std::int64_t s = 0; s < images.size(0); s += kChunk) {
            out.push_back(embedder.pooled_features(images.slice(0, s, std::min(s + kChunk, images.size(0)))));
        }
        return to_matrix(torch::cat(out));
    };
    return frechet_distance(pooled(real), pooled(fake));
}

std::vector<SweepRow> style_swap_sweep(train::SynthesisModel& model, const RecordBank& bank,
                                       const std::vector<AttackPair>& pairs, const fr::ImageEmbedder& eval_fr,
                                       double tau, const fr::ImageEmbedder& feat_net) {
    check_pairs(bank, pairs);
    torch::NoGradGuard no_grad;
    const int classes = static_cast<int>(bank.styles.size(1));
    const auto own = generate_pairs(model, bank, pairs, {}, false);
    std::vector<SweepRow> rows;
    for (auto set : all_swap_sets()) {
        SweepRow row;
        row.set = set;
        row.asr = attack_success_rate(model, bank, pairs, eval_fr, tau, set).asr;
        const auto fake = generate_pairs(model, bank, pairs, swap_classes(set, classes), true);
        row.perceptual_distance = pairwise_mean(perceptual_distance(own, fake, feat_net));
        rows.push_back(row);
    }
    return rows;
}

PixelDifference pixel_difference_study(train::SynthesisModel& model, const RecordBank& bank,
                                       const std::vector<AttackPair>& pairs) {
    check_pairs(bank, pairs);
    torch::NoGradGuard no_grad;
    const int classes = static_cast<int>(bank.styles.size(1));
    const auto own = generate_pairs(model, bank, pairs, {}, false);
    const auto id_swap = generate_pairs(model, bank, pairs, {}, true);
    const auto full_swap = generate_pairs(model, bank, pairs, swap_classes(SwapSet::FullSwap, classes), true);
    PixelDifference d;
    d.identity_swap = pairwise_mean(to_vector((own - id_swap).abs().mean({1, 2, 3})));
    d.full_swap = pairwise_mean(to_vector((own - full_swap).abs().mean({1, 2, 3})));
    return d;
}

std::vector<RowAblation> row_ablation_study(train::SynthesisModel& model, const RecordBank& bank,
                                            const std::vector<AttackPair>& pairs, const fr::ImageEmbedder& eval_fr) {
    check_pairs(bank, pairs);
    torch::NoGradGuard no_grad;
    model->eval();
    const auto attackers = index_tensor(pairs, false);
    const auto targets = index_tensor(pairs, true);
    const auto tokens = enc::assemble_token_batch(bank.styles.index_select(0, attackers),
                                                  model->identity_tokens(bank.id_embeddings.index_select(0, targets)));
    const auto masks = bank.onehot.index_select(0, attackers);
    const auto target_emb = bank.eval_embeddings.index_select(0, targets);
    auto score = [&](const torch::Tensor& toks) {
        std::vector<double> out;
        for (std::int64_t s = 0; s < toks.size(0); s += kChunk) {
            const auto e = std::min(s + kChunk, toks.size(0));
            const auto fake = model->generate(masks.slice(0, s, e), toks.slice(0, s, e)).image;
            const auto c = row_cosines(eval_fr.embed(fake), target_emb.slice(0, s, e));
            out.insert(out.end(), c.begin(), c.end());
        }
        return out;
    };
    const auto base = score(tokens);
    std::vector<RowAblation> rows;
    for (int row = 0; row < tokens.size(1); ++row) {
        auto ablated = tokens.clone();
        ablated.select(1, row).zero_();
        const auto s = score(ablated);
        std::vector<double> delta(s.size());
        std::size_t pos = 0;
        std::size_t neg = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            delta[i] = s[i] - base[i];
            pos += delta[i] > 0.0 ? 1 : 0;
            neg += delta[i] < 0.0 ? 1 : 0;
        }
        rows.push_back({row, pairwise_mean(delta),
                        static_cast<double>(std::max(pos, neg)) / static_cast<double>(s.size())});
    }
    return rows;
}

RegionMass attention_region_mass(train::SynthesisModel& model, const RecordBank& bank, int token,
                                 const std::vector<int>& classes) {
    torch::NoGradGuard no_grad;
    model->eval();
    const auto n = static_cast<std::int64_t>(bank.size());
    const auto tokens = enc::assemble_token_batch(bank.styles, model->identity_tokens(bank.id_embeddings));
    auto region = torch::zeros({n, 1, bank.onehot.size(2), bank.onehot.size(3)});
    for (int c : classes) {
        if (c < 0 || c >= bank.onehot.size(1)) throw ValidationError("region class out of range");
        region += bank.onehot.slice(1, c, c + 1);
    }
    double mass = 0.0;
    double total = 0.0;
    for (std::int64_t s = 0; s < n; s += kChunk) {
        const auto e = std::min(s + kChunk, n);
        const auto out = model->generate(bank.onehot.slice(0, s, e), tokens.slice(0, s, e));
        for (std::size_t b = 0; b < out.attention.size(); ++b) {
            if (token < 0 || token >= out.attention[b].size(2)) throw ValidationError("token index out of range");
            const auto [h, w] = out.attention_sizes[b];
            const auto col = out.attention[b].select(2, token).reshape({e - s, 1, h, w});
            const auto r = F::adaptive_avg_pool2d(region.slice(0, s, e), F::AdaptiveAvgPool2dFuncOptions({h, w}));
            mass += (col * r).sum().item<double>();
            total += col.sum().item<double>();
        }
    }
    RegionMass result;
    result.mass_fraction = total > 0.0 ? mass / total : 0.0;
    result.area_fraction = region.mean().item<double>();
    return result;
}

}  // namespace idsis::eval
