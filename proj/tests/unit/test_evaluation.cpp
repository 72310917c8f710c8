#include <algorithm>
#include <limits>
#include <random>
#include <set>

#include "idsis/errors.hpp"
#include "idsis/evaluation.hpp"
#include "../support/doctest.hpp"

using namespace idsis;
using namespace idsis::eval;

namespace {

// Brute force: try every score as the threshold and keep the smallest that meets the target.
double brute_force_tau(const std::vector<double>& scores, double far) {
    double best = std::numeric_limits<double>::infinity();
    for (double t : scores) {
        std::size_t above = 0;
        for (double s : scores) above += s > t ? 1 : 0;
        if (static_cast<double>(above) / scores.size() <= far) best = std::min(best, t);
    }
    return best;
}

struct Small {
    std::vector<data::FaceRecord> records;
    fr::FREmbedder train_fr;
    fr::FREmbedder eval_fr;
    train::SynthesisModel model{nullptr};
};

Small& small() {
    static Small s = [] {
        data::DataConfig cfg;
        cfg.resolution = 32;
        cfg.identity_count = 4;
        cfg.variations = 3;
        auto t = fr::default_fr_config(fr::Role::Train);
        auto e = fr::default_fr_config(fr::Role::Eval);
        for (auto* c : {&t, &e}) {
            c->resolution = 32;
            c->depth = 3;
            c->embedding_dim = 32;
        }
        fr::FREmbedder train_fr(t, fr::Role::Train, 4);
        fr::FREmbedder eval_fr(e, fr::Role::Eval, 4);
        train_fr.freeze();
        eval_fr.freeze();
        torch::manual_seed(0);
        auto mc = train::ModelConfig::make(32, 6, 16, 32);
        mc.generator.base_channels = 16;
        mc.encoder.mask_hidden = 32;
        mc.encoder.style_channels = 8;
        train::SynthesisModel model(mc);
        model->eval();
        return Small{data::generate_dataset(cfg), std::move(train_fr), std::move(eval_fr), model};
    }();
    return s;
}

}  // namespace

TEST_CASE("pairwise sum matches a long double reference") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(10007);
    long double ref = 0.0L;
    for (auto& x : v) {
        x = u(rng);
        ref += x;
    }
    CHECK(pairwise_sum(v) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
    CHECK(pairwise_mean({1.0, 2.0, 3.0, 6.0}) == 3.0);
    CHECK_THROWS_AS(pairwise_mean({}), ValidationError);
}

TEST_CASE("threshold calibration examples") {
    std::vector<double> scores;
    for (int i = 0; i < 100; ++i) scores.push_back(i / 100.0);
    CHECK(calibrate_threshold(scores, 0.01) == 0.98);
    CHECK(calibrate_threshold(scores, 0.05) == 0.94);
    CHECK(calibrate_threshold(std::vector<double>(100, 0.5), 0.01) == 0.5);
    CHECK(minimum_impostor_pairs(0.01) == 100);
    try {
        calibrate_threshold(std::vector<double>(99, 0.1), 0.01);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("100") != std::string::npos);
    }
    CHECK_THROWS_AS(calibrate_threshold(scores, 0.0), ValidationError);
    CHECK_THROWS_AS(calibrate_threshold(scores, 1.0), ValidationError);
    scores[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(calibrate_threshold(scores, 0.01), NumericError);
}

TEST_CASE("threshold calibration agrees with a brute-force scan") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 0.2);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> scores(400 + 150 * trial);
        // rounding creates ties
        for (auto& s : scores) s = std::round(std::clamp(n(rng), -1.0, 1.0) * 200.0) / 200.0;
        double previous = -2.0;
        for (double far : {0.2, 0.1, 0.05, 0.01}) {
            const double tau = calibrate_threshold(scores, far);
            CHECK(tau == brute_force_tau(scores, far));
            CHECK(success_fraction(scores, tau) <= far);
            CHECK(tau >= previous);
            previous = tau;
        }
    }
}

TEST_CASE("success is strictly above tau and monotone in tau") {
    const std::vector<double> s = {0.1, 0.2, 0.3, 0.4};
    CHECK(success_fraction(s, 0.2) == 0.5);
    CHECK(success_fraction(s, 0.4) == 0.0);
    CHECK(success_fraction({1.0, 1.0}, 0.9) == 1.0);
    double last = 0.0;
    for (double tau = 0.5; tau >= -0.1; tau -= 0.05) {
        const double asr = success_fraction(s, tau);
        CHECK(asr >= last);
        last = asr;
    }
}

TEST_CASE("impostor and attack pairs never share an identity") {
    const std::vector<std::uint32_t> ids = {0, 0, 1, 1, 2, 2, 3};
    const auto all = sample_impostor_pairs(ids, 1000, 5);
    CHECK(all.size() == 18);  // 21 pairs minus 3 same-identity ones
    for (std::size_t i = 1; i < all.size(); ++i) {
        CHECK(std::make_pair(all[i - 1].first, all[i - 1].second) < std::make_pair(all[i].first, all[i].second));
    }
    const auto some = sample_impostor_pairs(ids, 7, 5);
    CHECK(some.size() == 7);
    const auto again = sample_impostor_pairs(ids, 7, 5);
    for (std::size_t i = 0; i < some.size(); ++i) {
        CHECK(some[i].first == again[i].first);
        CHECK(some[i].second == again[i].second);
        CHECK(ids[some[i].first] != ids[some[i].second]);
    }
    const auto attacks = sample_attack_pairs(ids, 50, 9);
    CHECK(attacks.size() == 50);
    for (const auto& p : attacks) CHECK(ids[p.first] != ids[p.second]);
    CHECK_THROWS_AS(sample_attack_pairs({1, 1, 1}, 3, 0), ValidationError);
}

TEST_CASE("swap sets") {
    for (auto set : all_swap_sets()) CHECK(parse_swap_set(swap_set_name(set)) == set);
    CHECK(all_swap_sets().size() == 7);
    CHECK(swap_classes(SwapSet::NoSwap, 6).empty());
    CHECK(swap_classes(SwapSet::Eyes, 6) == std::vector<int>{3});
    CHECK(swap_classes(SwapSet::FullSwap, 6) == std::vector<int>{0, 1, 2, 3, 4, 5});
    CHECK_THROWS_AS(parse_swap_set("Nose"), ValidationError);
}

TEST_CASE("Frechet distance analytic cases") {
    const int d = 3;
    Moments a{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d)};
    CHECK(frechet_from_moments(a, a) == doctest::Approx(0.0).epsilon(1e-9));
    Moments shifted = a;
    shifted.mean << 1.0, 2.0, 2.0;
    CHECK(frechet_from_moments(a, shifted) == doctest::Approx(9.0).epsilon(1e-9));
    Moments wide{Eigen::VectorXd::Zero(d), 4.0 * Eigen::MatrixXd::Identity(d, d)};
    CHECK(frechet_from_moments(a, wide) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(frechet_from_moments(wide, a) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("Frechet distance of point sets") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd x(200, 4);
    for (int i = 0; i < x.rows(); ++i) {
        for (int j = 0; j < x.cols(); ++j) x(i, j) = n(rng);
    }
    const Eigen::RowVectorXd centre = x.colwise().mean();
    x.rowwise() -= centre;
    Eigen::RowVectorXd c(4);
    c << 1.0, -1.0, 0.5, 0.0;
    const Eigen::MatrixXd moved = x.rowwise() + c;
    CHECK(frechet_distance(x, moved) == doctest::Approx(c.squaredNorm()).epsilon(1e-6));
    // Same mean, covariance scaled by 4: trace(S + 4S - 2 * 2S) = trace(S).
    const double trace = fit_moments(x).cov.trace();
    CHECK(frechet_distance(x, 2.0 * x) == doctest::Approx(trace).epsilon(1e-6));
    CHECK(frechet_distance(x, moved) == doctest::Approx(frechet_distance(moved, x)).epsilon(1e-9));
    CHECK_THROWS_AS(frechet_distance(x.topRows(1), x), ValidationError);
    Eigen::MatrixXd bad = x;
    bad(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(frechet_distance(bad, x), NumericError);
}

TEST_CASE("perceptual distance is zero on identical images and symmetric") {
    auto& s = small();
    const auto a = s.records[0].image;
    const auto b = s.records[5].image;
    CHECK(perceptual_distance(a, a, s.eval_fr) == doctest::Approx(0.0));
    const double ab = perceptual_distance(a, b, s.eval_fr);
    CHECK(ab > 0.0);
    CHECK(ab == doctest::Approx(perceptual_distance(b, a, s.eval_fr)));
}

TEST_CASE("protocol functions on a small untrained model") {
    auto& s = small();
    torch::NoGradGuard no_grad;
    const auto bank = make_bank(s.model, s.train_fr, s.eval_fr, s.records);
    CHECK(bank.size() == 12);
    CHECK(bank.styles.sizes() == torch::IntArrayRef({12, 6, 16}));

    const auto suite = cosine_suite(s.model, bank, s.eval_fr);
    CHECK(suite.scores.size() == 12);
    CHECK(suite.mean == doctest::Approx(pairwise_mean(suite.scores)));
    for (double v : suite.scores) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }

    const auto pairs = sample_attack_pairs(bank.identity, 10, 1);
    const auto attack = attack_success_rate(s.model, bank, pairs, s.eval_fr, 0.0);
    CHECK(attack.target_scores.size() == 10);
    CHECK(attack.asr == success_fraction(attack.target_scores, 0.0));
    CHECK(attack.asr == success_fraction(attack.target_scores, attack.tau));

    const auto sweep = style_swap_sweep(s.model, bank, pairs, s.eval_fr, 0.0, s.eval_fr);
    REQUIRE(sweep.size() == 7);
    CHECK(sweep.front().set == SwapSet::NoSwap);
    CHECK(sweep.front().asr == attack.asr);
    for (const auto& row : sweep) {
        CHECK(row.asr >= 0.0);
        CHECK(row.asr <= 1.0);
        CHECK(row.perceptual_distance >= 0.0);
    }

    const auto pixels = pixel_difference_study(s.model, bank, pairs);
    CHECK(pixels.identity_swap >= 0.0);
    CHECK(pixels.full_swap >= 0.0);

    const auto rows = row_ablation_study(s.model, bank, pairs, s.eval_fr);
    CHECK(rows.size() == 7);
    for (const auto& r : rows) {
        CHECK(r.sign_consistency >= 0.0);
        CHECK(r.sign_consistency <= 1.0);
    }

    const auto everywhere = attention_region_mass(s.model, bank, 6, {0, 1, 2, 3, 4, 5});
    CHECK(everywhere.mass_fraction == doctest::Approx(1.0));
    CHECK(everywhere.area_fraction == doctest::Approx(1.0));

    std::vector<AttackPair> same_identity = {{0, 1}};
    CHECK_THROWS_AS(attack_success_rate(s.model, bank, same_identity, s.eval_fr, 0.0), ValidationError);
    CHECK_THROWS_AS(make_bank(s.model, s.train_fr, s.eval_fr, {}), ValidationError);
}
