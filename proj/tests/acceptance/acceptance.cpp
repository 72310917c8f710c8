// Acceptance runner: one PASS/FAIL line per criterion.
#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>

#include "idsis/checkpoint.hpp"
#include "idsis/commands.hpp"
#include "idsis/evaluation.hpp"
#include "idsis/generator.hpp"
#include "idsis/hashing.hpp"
#include "idsis/losses.hpp"
#include "idsis/tensor_util.hpp"
#include "idsis/training.hpp"
#include "../support/finite_difference.hpp"
#include "trained_artifacts.hpp"

namespace fs = std::filesystem;
using namespace idsis;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

class Runner {
public:
    void run(int id, const std::string& title, const std::function<Outcome()>& body) {
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = body();
        } catch (const std::exception& e) {
            outcome = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cout << (outcome.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | "
                  << outcome.detail << " | " << num(secs, 3) << " s" << std::endl;
        failures_ += outcome.pass ? 0 : 1;
    }
    int failures() const { return failures_; }

private:
    int failures_ = 0;
};

void info(const std::string& text) { std::cout << "INFO " << text << std::endl; }

// 1 ------------------------------------------------------------------------------------------
Outcome attention_rows() {
    torch::manual_seed(101);
    train::SynthesisModel model(train::ModelConfig::make(64, 6, 64, 128));
    model->eval();
    torch::NoGradGuard no_grad;
    data::DataConfig cfg;
    std::mt19937_64 rng(5);
    std::vector<data::FaceRecord> records;
    for (int i = 0; i < 100; ++i) {
        records.push_back(data::generate_record(data::ToyIdentitySpec::from_seed(static_cast<std::uint32_t>(rng() % 100000), 0),
                                                rng(), cfg));
    }
    double worst = 0.0;
    std::size_t blocks = 0;
    for (std::size_t s = 0; s < records.size(); s += 25) {
        const auto span = std::span<const data::FaceRecord>(records).subspan(s, 25);
        const auto images = images_to_tensor(span);
        const auto onehot = masks_to_onehot(span, 6);
        const auto ids = torch::nn::functional::normalize(torch::randn({25, 128}),
                                                          torch::nn::functional::NormalizeFuncOptions().dim(1));
        // half with encoder tokens, half with arbitrary tokens
        const auto encoded = model->tokens(images, onehot, ids);
        const auto arbitrary = 3.0 * torch::randn(encoded.sizes());
        for (const auto& tokens : {encoded, arbitrary}) {
            const auto out = model->generate(onehot, tokens);
            blocks = out.attention.size();
            for (const auto& a : out.attention) {
                worst = std::max(worst, (a.to(torch::kFloat64).sum(-1) - 1.0).abs().max().item<double>());
            }
        }
    }
    return {worst <= 1e-5 && blocks > 0,
            "max |row sum - 1| = " + num(worst, 3) + " over 200 inputs x " + std::to_string(blocks) + " blocks"};
}

// 2 ------------------------------------------------------------------------------------------
Outcome gradient_oracle() {
    torch::manual_seed(202);
    const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
    gen::CrossAttentionWeights w{torch::randn({3, 4}, f64), torch::randn({5, 4}, f64), torch::randn({5, 4}, f64),
                                 torch::randn({4, 3}, f64)};
    auto x = torch::randn({4, 3}, f64);
    auto t = torch::randn({3, 5}, f64);
    const auto probe = torch::randn({4, 3}, f64);
    std::vector<torch::Tensor*> inputs = {&x, &t, &w.query, &w.key, &w.value, &w.output};
    const auto attn_objective = [&] { return (gen::cross_attention(x, t, w).features * probe).sum(); };
    for (auto* p : inputs) p->set_requires_grad(true);
    attn_objective().backward();
    double attn_err = 0.0;
    std::vector<torch::Tensor> analytic;
    for (auto* p : inputs) analytic.push_back(p->grad().clone());
    for (auto* p : inputs) p->set_requires_grad(false);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto numeric = testing::numeric_gradient([&] { return attn_objective().item<double>(); }, *inputs[i]);
        attn_err = std::max(attn_err, testing::relative_error(analytic[i], numeric));
    }

    auto fr_cfg = fr::default_fr_config(fr::Role::Train);
    fr_cfg.resolution = 8;
    fr_cfg.depth = 2;
    fr_cfg.embedding_dim = 16;
    fr::FREmbedder fr_net(fr_cfg, fr::Role::Train, 3);
    fr_net.to(torch::kFloat64);
    fr_net.freeze();
    auto generated = torch::rand({2, 3, 8, 8}, f64) * 2 - 1;
    const auto reference = torch::rand({2, 3, 8, 8}, f64) * 2 - 1;
    generated.set_requires_grad(true);
    loss::identity_loss(generated, reference, fr_net).backward();
    const auto id_analytic = generated.grad().clone();
    generated.set_requires_grad(false);
    const auto id_numeric = testing::numeric_gradient(
        [&] { return loss::identity_loss(generated, reference, fr_net).item<double>(); }, generated);
    const double id_err = testing::relative_error(id_analytic, id_numeric);
    return {attn_err <= 1e-3 && id_err <= 1e-3,
            "cross_attention rel err " + num(attn_err, 3) + ", identity_loss rel err " + num(id_err, 3)};
}

// 3 ------------------------------------------------------------------------------------------
Outcome calibration_oracle() {
    std::mt19937_64 rng(303);
    std::normal_distribution<double> n(0.0, 0.15);
    std::vector<double> scores(1000);
    for (auto& s : scores) s = std::round(std::clamp(n(rng), -1.0, 1.0) * 500.0) / 500.0;  // ties on purpose
    bool ok = true;
    std::string detail;
    for (double far : {0.01, 0.05, 0.1}) {
        double brute = std::numeric_limits<double>::infinity();
        for (double candidate : scores) {
            std::size_t above = 0;
            for (double s : scores) above += s > candidate ? 1 : 0;
            if (static_cast<double>(above) / scores.size() <= far) brute = std::min(brute, candidate);
        }
        const double tau = eval::calibrate_threshold(scores, far);
        const double empirical = eval::success_fraction(scores, tau);
        ok = ok && tau == brute && empirical <= far;
        detail += (detail.empty() ? "" : "; ") + std::string("FAR ") + num(far) + ": tau " + num(tau, 6) +
                  " (scan " + num(brute, 6) + "), empirical FAR " + num(empirical);
    }
    return {ok, detail};
}

// 4 ------------------------------------------------------------------------------------------
Outcome frechet_cases() {
    std::mt19937_64 rng(404);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd x(500, 2);
    for (int i = 0; i < x.rows(); ++i) x.row(i) << n(rng), n(rng);
    const double identical = eval::frechet_distance(x, x);

    eval::Moments a{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
    eval::Moments b{Eigen::Vector2d(3.0, 4.0), Eigen::MatrixXd::Identity(2, 2)};
    const double shift = eval::frechet_from_moments(a, b);
    const Eigen::RowVector2d offset(3.0, 4.0);
    const double shift_points = eval::frechet_distance(x, x.rowwise() + offset);

    eval::Moments v4{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 4.0)};
    eval::Moments v1{Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Constant(1, 1, 1.0)};
    const double variance = eval::frechet_from_moments(v4, v1);
    // 1-d point sets with sample variances exactly 1 and 4 and equal means
    Eigen::MatrixXd p1(4, 1), p4(4, 1);
    const double s = std::sqrt(3.0) / 2.0;
    p1 << -s, -s, s, s;
    p4 = 2.0 * p1;
    const double variance_points = eval::frechet_distance(p4, p1);

    const bool ok = std::abs(identical) <= 1e-6 && std::abs(shift - 25.0) <= 1e-6 &&
                    std::abs(shift_points - 25.0) <= 1e-6 && std::abs(variance - 1.0) <= 1e-6 &&
                    std::abs(variance_points - 1.0) <= 1e-6;
    return {ok, "identical " + num(identical, 3) + ", mean shift " + num(shift, 10) + " (points " +
                    num(shift_points, 10) + "), variance 4 vs 1 " + num(variance, 10) + " (points " +
                    num(variance_points, 10) + ")"};
}

// 5-8 ----------------------------------------------------------------------------------------
struct TrainedContext {
    acceptance::TrainedArtifacts artifacts;
    train::LoadedModel with_id;
    train::LoadedModel without_id;
    eval::RecordBank bank_with;
    eval::RecordBank bank_without;
    double tau = 0.0;
    std::vector<eval::AttackPair> pairs;
};

constexpr std::uint64_t kEvalSeed = 7;

std::unique_ptr<TrainedContext> load_trained(const fs::path& root) {
    auto setup = acceptance::TrainedSetup::defaults();
    auto ctx = std::make_unique<TrainedContext>(TrainedContext{acceptance::ensure_trained(root, setup, std::cout)});
    auto& a = ctx->artifacts;
    ctx->with_id = train::load_model(a.with_id);
    ctx->without_id = train::load_model(a.without_id);
    torch::NoGradGuard no_grad;
    ctx->bank_with = eval::make_bank(ctx->with_id.model, a.train_fr, a.eval_fr, a.test_records);
    ctx->bank_without = eval::make_bank(ctx->without_id.model, a.train_fr, a.eval_fr, a.test_records);
    const auto impostors = eval::sample_impostor_pairs(ctx->bank_with.identity, 2000, kEvalSeed);
    ctx->tau = eval::calibrate_threshold(eval::impostor_scores(ctx->bank_with, impostors), 0.01);
    ctx->pairs = eval::sample_attack_pairs(ctx->bank_with.identity, 500, kEvalSeed + 1);
    info("test split: " + std::to_string(a.test_records.size()) + " records; " + std::to_string(impostors.size()) +
         " impostor pairs; tau " + num(ctx->tau, 6));
    return ctx;
}

Outcome identity_trend(TrainedContext& c) {
    torch::NoGradGuard no_grad;
    const auto& eval_fr = c.artifacts.eval_fr;
    const double with = eval::cosine_suite(c.with_id.model, c.bank_with, eval_fr).mean;
    const double without = eval::cosine_suite(c.without_id.model, c.bank_without, eval_fr).mean;
    return {with - without >= 0.05, "C_mean lambda_id=10 " + num(with) + ", lambda_id=0 " + num(without) +
                                        ", difference " + num(with - without) + " (need >= 0.05)"};
}

Outcome impersonation_trend(TrainedContext& c) {
    torch::NoGradGuard no_grad;
    const auto& eval_fr = c.artifacts.eval_fr;
    const auto with = eval::attack_success_rate(c.with_id.model, c.bank_with, c.pairs, eval_fr, c.tau);
    const auto without = eval::attack_success_rate(c.without_id.model, c.bank_without, c.pairs, eval_fr, c.tau);
    info("ASR against the attacker embedding: lambda_id=10 " +
         num(eval::success_fraction(with.attacker_scores, c.tau)) + ", lambda_id=0 " +
         num(eval::success_fraction(without.attacker_scores, c.tau)));
    const auto sweep = eval::style_swap_sweep(c.with_id.model, c.bank_with, c.pairs, eval_fr, c.tau, eval_fr);
    double no_swap_asr = 0.0, full_asr = 0.0, no_swap_pd = 0.0;
    double min_pd = std::numeric_limits<double>::infinity();
    std::string rows;
    for (const auto& r : sweep) {
        if (r.set == eval::SwapSet::NoSwap) {
            no_swap_asr = r.asr;
            no_swap_pd = r.perceptual_distance;
        }
        if (r.set == eval::SwapSet::FullSwap) full_asr = r.asr;
        min_pd = std::min(min_pd, r.perceptual_distance);
        rows += " " + eval::swap_set_name(r.set) + "=" + num(r.asr, 3) + "/" + num(r.perceptual_distance, 3);
    }
    info("sweep (ASR/perceptual distance):" + rows);
    const bool ok = with.asr > without.asr && full_asr >= no_swap_asr && no_swap_pd <= min_pd;
    return {ok, "ASR lambda_id=10 " + num(with.asr) + " vs lambda_id=0 " + num(without.asr) + "; ASR FullSwap " +
                    num(full_asr) + " vs NoSwap " + num(no_swap_asr) + "; PD NoSwap " + num(no_swap_pd, 4) +
                    " (min " + num(min_pd, 4) + ")"};
}

Outcome inconspicuousness(TrainedContext& c) {
    torch::NoGradGuard no_grad;
    const std::vector<eval::AttackPair> first(c.pairs.begin(), c.pairs.begin() + 100);
    const auto d = eval::pixel_difference_study(c.with_id.model, c.bank_with, first);
    const double ratio = d.identity_swap / d.full_swap;
    return {ratio < 0.25, "mean |own - id swap| " + num(d.identity_swap) + ", mean |own - FullSwap| " +
                              num(d.full_swap) + ", ratio " + num(ratio) + " (need < 0.25)"};
}

Outcome token_locality(TrainedContext& c) {
    torch::NoGradGuard no_grad;
    auto& model = c.with_id.model;
    const auto& bank = c.bank_with;
    const std::vector<eval::AttackPair> first(c.pairs.begin(), c.pairs.begin() + 100);
    const int classes = static_cast<int>(bank.styles.size(1));

    // Row swaps: style row c from the target, or the identity row from the target.
    bool rows_ok = true;
    std::vector<std::int64_t> att_idx, tgt_idx;
    for (const auto& p : first) {
        att_idx.push_back(static_cast<std::int64_t>(p.first));
        tgt_idx.push_back(static_cast<std::int64_t>(p.second));
    }
    const auto att = torch::tensor(att_idx, torch::kLong);
    const auto tgt = torch::tensor(tgt_idx, torch::kLong);
    const auto own_id = model->identity_tokens(bank.id_embeddings.index_select(0, att));
    const auto own = enc::assemble_token_batch(bank.styles.index_select(0, att), own_id);
    for (int row = 0; row < classes; ++row) {
        const auto swapped = enc::assemble_token_batch(eval::compose_styles(bank, first, {row}), own_id);
        for (int r = 0; r <= classes; ++r) {
            if (r != row) rows_ok = rows_ok && torch::equal(swapped.select(1, r), own.select(1, r));
        }
    }
    const auto id_swapped = enc::assemble_token_batch(bank.styles.index_select(0, att),
                                                      model->identity_tokens(bank.id_embeddings.index_select(0, tgt)));
    rows_ok = rows_ok && torch::equal(id_swapped.slice(1, 0, classes), own.slice(1, 0, classes));

    // Recolouring one class region in the image leaves the other style codes unchanged.
    const auto images = bank.images.index_select(0, att);
    const auto onehot = bank.onehot.index_select(0, att);
    const auto base_styles = model->styles(images, onehot).codes;
    for (int row = 0; row < classes; ++row) {
        const auto region = onehot.select(1, row).unsqueeze(1);
        const auto recoloured = images * (1 - region) + (-images) * region;
        const auto styles = model->styles(recoloured, onehot).codes;
        for (int r = 0; r < classes; ++r) {
            if (r != row) rows_ok = rows_ok && torch::equal(styles.select(1, r), base_styles.select(1, r));
        }
    }

    const auto ablation = eval::row_ablation_study(model, bank, first, c.artifacts.eval_fr);
    bool only_identity = true;
    std::string detail;
    for (const auto& a : ablation) {
        const bool consistent = a.sign_consistency >= 0.6;
        only_identity = only_identity && (a.row == classes ? consistent : !consistent);
        const std::string name = a.row == classes ? "identity" : data::toy_class_names()[static_cast<std::size_t>(a.row)];
        detail += " " + name + "=" + num(a.sign_consistency, 3) + "(" + num(a.mean_delta, 3) + ")";
    }
    return {rows_ok && only_identity, std::string("row swaps ") + (rows_ok ? "bit-identical" : "NOT bit-identical") +
                                          "; sign consistency (mean delta):" + detail};
}

// 9 ------------------------------------------------------------------------------------------
Outcome reproducibility(const fs::path& work) {
    data::DataConfig dc;
    dc.resolution = 32;
    dc.identity_count = 20;
    dc.variations = 4;
    const auto records = data::generate_dataset(dc);
    auto fc = fr::default_fr_config(fr::Role::Train);
    fc.resolution = 32;
    fc.depth = 3;
    fr::FREmbedder fr_net(fc, fr::Role::Train, 20);
    fr_net.freeze();

    train::TrainConfig cfg;
    cfg.model = train::ModelConfig::make(32, 6, 64, fc.embedding_dim);
    cfg.batch = 8;
    cfg.iterations = 100;
    cfg.checkpoint_every = 100;
    cfg.log_every = 50;
    cfg.seed = 9;

    const auto dir_a = work / "repro_a";
    const auto dir_b = work / "repro_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    train::train(records, fr_net, cfg, dir_a);
    // second run steps the trainer by hand and saves through the same writer
    train::Trainer trainer(cfg, fr_net, records);
    for (int i = 0; i < 100; ++i) trainer.step();
    fs::create_directories(dir_b);
    save_checkpoint(dir_b / "iter_0000100.ckpt", trainer.checkpoint());
    const auto ha = sha256_file(dir_a / "iter_0000100.ckpt");
    const auto hb = sha256_file(dir_b / "iter_0000100.ckpt");

    auto loaded = train::load_model(dir_b / "iter_0000100.ckpt");
    torch::NoGradGuard no_grad;
    trainer.model()->eval();
    const auto span = std::span<const data::FaceRecord>(records).subspan(0, 8);
    const auto images = images_to_tensor(span);
    const auto onehot = masks_to_onehot(span, 6);
    const auto ids = fr_net.embed(images);
    const auto tokens = trainer.model()->tokens(images, onehot, ids);
    const auto a = trainer.model()->generate(onehot, tokens).image;
    const auto b = loaded.model->generate(onehot, loaded.model->tokens(images, onehot, ids)).image;
    const bool same_output = torch::equal(a, b);
    return {ha == hb && same_output, "checkpoint sha256 " + ha.substr(0, 16) + (ha == hb ? " == " : " != ") +
                                         hb.substr(0, 16) + "; generate() after round trip " +
                                         (same_output ? "bit-identical" : "differs")};
}

// 10 -----------------------------------------------------------------------------------------
Outcome end_to_end(const fs::path& cli, const fs::path& work) {
    const auto out = work / "e2e";
    fs::remove_all(out);
    fs::create_directories(out);
    const auto cfg_path = out / "e2e.cfg";
    std::ofstream(cfg_path) << "output_dir = " << out.string() << "\nresolution = 32\nidentities = 20\n"
                            << "iterations = 500\ncheckpoint_every = 250\n";
    const auto log = out / "pipeline.log";
    const std::vector<std::string> steps = {"gen-data",     "train-fr --role train", "train-fr --role eval",
                                            "train",        "eval-recon",            "eval-attack",
                                            "eval-sweep",   "reconstruct",           "swap-id",
                                            "swap-style",   "attn-maps",             "plot"};
    const auto start = std::chrono::steady_clock::now();
    for (const auto& step : steps) {
        const std::string command = "\"" + cli.string() + "\" " + step + " --config \"" + cfg_path.string() +
                                    "\" >> \"" + log.string() + "\" 2>&1";
        const int rc = std::system(command.c_str());
        if (rc != 0) return {false, "`idsis " + step + "` failed (status " + std::to_string(rc) + "); see " + log.string()};
    }
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

    std::vector<fs::path> expected = {
        "data/meta.json",          "checkpoints/train_fr.ckpt",  "checkpoints/eval_fr.ckpt",
        "checkpoints/model/model.ckpt", "metrics.json",          "eval-recon/scores.csv",
        "eval-attack/pairs.csv",   "eval-sweep/sweep.csv",       "plot/sweep.svg"};
    for (const auto* cmd : {"gen-data", "train-fr-train", "train-fr-eval", "train", "eval-recon", "eval-attack", "eval-sweep", "plot"}) {
        expected.push_back(fs::path(cmd) / "manifest.json");
    }
    std::size_t per_record = 0;
    for (const auto* cmd : {"reconstruct", "swap-id", "swap-style", "attn-maps"}) {
        if (!fs::exists(out / cmd)) continue;
        for (const auto& entry : fs::directory_iterator(out / cmd)) {
            if (entry.is_directory() && fs::exists(entry.path() / "manifest.json")) ++per_record;
        }
    }
    std::string missing;
    for (const auto& rel : expected) {
        if (!fs::exists(out / rel)) missing += " " + rel.string();
    }
    const auto metrics = cli::read_json(out / "metrics.json");
    bool metrics_ok = true;
    for (const auto* key : {"C_mean", "frechet_distance", "tau", "asr", "sweep"}) metrics_ok = metrics_ok && metrics.contains(key);
    const bool ok = missing.empty() && per_record >= 4 && metrics_ok && minutes < 15.0;
    return {ok, std::to_string(steps.size()) + " commands in " + num(minutes, 3) + " min (limit 15); " +
                    (missing.empty() ? "all artifacts present" : "missing:" + missing) + "; " +
                    std::to_string(per_record) + " per-record manifests; C_mean " +
                    (metrics.contains("C_mean") ? metrics["C_mean"].dump() : "?") + ", ASR " +
                    (metrics.contains("asr") ? metrics["asr"].dump() : "?")};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string group = "all";
    std::string work = IDSIS_DEFAULT_WORK_DIR;
    std::string artifacts = IDSIS_DEFAULT_ARTIFACT_DIR;
    std::string cli_path = IDSIS_DEFAULT_CLI;
    bool report_only = false;
    app.add_option("--group", group, "fast, trained or all")->check(CLI::IsMember({"fast", "trained", "all"}));
    app.add_option("--work-dir", work, "scratch directory for the fast criteria");
    app.add_option("--artifacts", artifacts, "cache of trained models for criteria 5-8");
    app.add_option("--cli", cli_path, "path to the idsis executable");
    app.add_flag("--report-only", report_only, "exit 0 even when a criterion fails");
    CLI11_PARSE(app, argc, argv);
    if (const char* env = std::getenv("IDSIS_ACCEPTANCE_DIR"); env != nullptr && *env != '\0') artifacts = env;

    torch::set_num_threads(1);
    fs::create_directories(work);
    Runner runner;
    const bool fast = group != "trained";
    const bool trained = group != "fast";
    if (fast) {
        runner.run(1, "attention rows sum to 1 (1e-5)", attention_rows);
        runner.run(2, "gradients match central differences (rel 1e-3)", gradient_oracle);
        runner.run(3, "calibrate_threshold equals brute-force scan", calibration_oracle);
        runner.run(4, "Frechet analytic cases (1e-6)", frechet_cases);
    }
    if (trained) {
        std::unique_ptr<TrainedContext> ctx;
        std::string load_error;
        try {
            ctx = load_trained(artifacts);
        } catch (const std::exception& e) {
            load_error = e.what();
        }
        const auto with_ctx = [&](Outcome (*f)(TrainedContext&)) {
            return [&ctx, &load_error, f]() -> Outcome {
                if (!ctx) return {false, "trained artifacts unavailable: " + load_error};
                return f(*ctx);
            };
        };
        runner.run(5, "identity injection raises eval-FR cosine by >= 0.05", with_ctx(identity_trend));
        runner.run(6, "impersonation ASR and sweep orderings", with_ctx(impersonation_trend));
        runner.run(7, "identity swap is inconspicuous (< 25% of FullSwap)", with_ctx(inconspicuousness));
        runner.run(8, "token locality and identity-row ablation", with_ctx(token_locality));
    }
    if (fast) {
        runner.run(9, "bit-identical checkpoints and round trip", [&] { return reproducibility(work); });
        runner.run(10, "end-to-end CLI pipeline under 15 min", [&] { return end_to_end(cli_path, work); });
    }
    std::cout << (runner.failures() == 0 ? "all criteria passed" : std::to_string(runner.failures()) + " criteria failed")
              << std::endl;
    return report_only ? 0 : (runner.failures() == 0 ? 0 : 1);
}
