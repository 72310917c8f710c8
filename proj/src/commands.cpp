#include "idsis/commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "idsis/errors.hpp"
#include "idsis/evaluation.hpp"
#include "idsis/hashing.hpp"
#include "idsis/image_io.hpp"
#include "idsis/tensor_util.hpp"

namespace idsis::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Exclusive advisory lock on <output_dir>/.lock for the lifetime of a command.
class OutputLock {
public:
    explicit OutputLock(const fs::path& dir) {
        fs::create_directories(dir);
        path_ = dir / ".lock";
        fd_ = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
        if (fd_ < 0) throw StateError("cannot open lock file '" + path_.string() + "'");
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw StateError("output directory '" + dir.string() + "' is in use by another idsis process");
        }
    }
    ~OutputLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) throw MissingPrerequisiteError(path.string(), producer);
}

struct Manifest {
    std::string command;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    json extra = json::object();
};

void write_manifest(const fs::path& dir, const RunConfig& cfg, const Manifest& m) {
    json inputs = json::object();
    for (const auto& p : m.inputs) inputs[p.string()] = sha256_file(p);
    json outputs = json::object();
    for (const auto& p : m.outputs) {
        if (fs::is_regular_file(p)) outputs[p.string()] = sha256_file(p);
    }
    json doc = {{"command", m.command},
                {"config_hash", cfg.hash()},
                {"config", cfg.to_json()},
                {"inputs", inputs},
                {"outputs", outputs},
                {"seeds",
                 {{"seed", cfg.seed},
                  {"fr_train_seed", cfg.fr_train_seed},
                  {"fr_eval_seed", cfg.fr_eval_seed},
                  {"eval_seed", cfg.eval_seed}}},
                {"timestamp", utc_timestamp()}};
    if (!m.extra.empty()) doc["details"] = m.extra;
    write_json(dir / "manifest.json", doc);
}

void check_dataset(const RunConfig& cfg) {
    const auto layout = data::parse_layout(cfg.layout);
    if (layout == data::Layout::Toy) {
        require(cfg.data_path() / "meta.json", "gen-data");
    } else if (!fs::exists(cfg.data_path() / "images")) {
        throw IngestionError("external dataset '" + cfg.data_path().string() + "' has no images/ directory");
    }
}

std::vector<data::FaceRecord> load_split(const RunConfig& cfg, data::Split split) {
    check_dataset(cfg);
    auto records = data::load_dataset(cfg.data_path(), data::parse_layout(cfg.layout), split, cfg.classes);
    if (records.empty()) {
        throw ValidationError("the " + std::string(split == data::Split::Train ? "train" : "test") +
                              " split of '" + cfg.data_path().string() + "' is empty");
    }
    if (records.front().image.height != cfg.resolution) {
        throw ConfigError("dataset resolution " + std::to_string(records.front().image.height) +
                          " differs from the configured resolution " + std::to_string(cfg.resolution));
    }
    return records;
}

fr::FREmbedder load_fr(const RunConfig& cfg, fr::Role role) {
    const auto path = cfg.fr_path(role);
    require(path, "train-fr --role " + fr::role_name(role));
    return fr::FREmbedder::load(path);
}

train::LoadedModel load_trained(const RunConfig& cfg) {
    require(cfg.model_path(), "train");
    return train::load_model(cfg.model_path());
}

const data::FaceRecord& find_record(const std::vector<data::FaceRecord>& records, const std::string& name) {
    for (const auto& r : records) {
        if (r.name == name) return r;
    }
    throw ValidationError("no record named '" + name + "' in the dataset");
}

std::vector<data::FaceRecord> all_records(const RunConfig& cfg) {
    auto test = load_split(cfg, data::Split::Test);
    auto train = load_split(cfg, data::Split::Train);
    test.insert(test.end(), std::make_move_iterator(train.begin()), std::make_move_iterator(train.end()));
    return test;
}

void write_mask_png(const fs::path& path, const data::LabelMap& labels) {
    io::write_png_rgb8(path, labels.height, labels.width, io::colorize_labels(labels));
}

void write_tensor_png(const fs::path& path, const torch::Tensor& image) { io::write_png_rgb(path, tensor_to_image(image)); }

// |a - b| averaged over channels, scaled so 1.0 maps to white.
void write_difference_png(const fs::path& path, const torch::Tensor& a, const torch::Tensor& b) {
    const auto diff = (a - b).abs().mean(0).div(2.0).clamp(0.0, 1.0).contiguous();
    const int h = static_cast<int>(diff.size(0));
    const int w = static_cast<int>(diff.size(1));
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    const float* p = diff.data_ptr<float>();
    for (int i = 0; i < h * w; ++i) {
        const auto v = static_cast<std::uint8_t>(std::lround(p[i] * 255.0f));
        rgb[static_cast<std::size_t>(i) * 3] = rgb[static_cast<std::size_t>(i) * 3 + 1] =
            rgb[static_cast<std::size_t>(i) * 3 + 2] = v;
    }
    io::write_png_rgb8(path, h, w, rgb);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write '" + path.string() + "'");
    out << text;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// Merges `part` into <output_dir>/metrics.json.
void update_metrics(const RunConfig& cfg, const json& part) {
    const auto path = cfg.output_path() / "metrics.json";
    json doc = fs::exists(path) ? read_json(path) : json::object();
    for (const auto& [k, v] : part.items()) doc[k] = v;
    write_json(path, doc);
}

json checkpoint_info(const RunConfig& cfg) {
    return {{"path", cfg.model_path().string()}, {"sha256", sha256_file(cfg.model_path())}};
}

fs::path command_dir(const RunConfig& cfg, const std::string& name) {
    const auto dir = cfg.output_path() / name;
    fs::create_directories(dir);
    return dir;
}

struct EvalInputs {
    train::LoadedModel model;
    fr::FREmbedder train_fr;
    fr::FREmbedder eval_fr;
};

EvalInputs load_eval_inputs(const RunConfig& cfg) {
    auto model = load_trained(cfg);
    auto train_fr = load_fr(cfg, fr::Role::Train);
    auto eval_fr = load_fr(cfg, fr::Role::Eval);
    if (model.manifest.value("train_fr_hash", "") != module_hash(*train_fr.net())) {
        throw StateError("the model was trained against a different train-FR than '" +
                         cfg.fr_path(fr::Role::Train).string() + "'");
    }
    return {std::move(model), std::move(train_fr), std::move(eval_fr)};
}

std::vector<fs::path> eval_input_paths(const RunConfig& cfg) {
    return {cfg.model_path(), cfg.fr_path(fr::Role::Train), cfg.fr_path(fr::Role::Eval), cfg.data_path() / "meta.json"};
}

// Separation of genuine and impostor cosines on held-out records.
std::pair<double, double> separation(const fr::FREmbedder& model, const std::vector<data::FaceRecord>& records) {
    torch::NoGradGuard no_grad;
    const auto emb = model.embed(images_to_tensor(std::span<const data::FaceRecord>(records))).to(torch::kFloat64);
    const auto sim = emb.matmul(emb.t());
    std::vector<double> genuine;
    std::vector<double> impostor;
    const auto acc = sim.accessor<double, 2>();
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (std::size_t j = i + 1; j < records.size(); ++j) {
            const double s = acc[static_cast<std::int64_t>(i)][static_cast<std::int64_t>(j)];
            (records[i].identity_id == records[j].identity_id ? genuine : impostor).push_back(s);
        }
    }
    if (genuine.empty() || impostor.empty()) return {0.0, 0.0};
    return {eval::pairwise_mean(genuine), eval::pairwise_mean(impostor)};
}

// ---- commands ------------------------------------------------------------------------------------

void cmd_gen_data(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
    if (data::parse_layout(cfg.layout) != data::Layout::Toy) {
        throw ConfigError("gen-data only generates the toy layout; set layout = toy");
    }
    const auto dc = cfg.data_config();
    data::write_toy_dataset(cfg.data_path(), dc);
    const auto meta = data::read_dataset_meta(cfg.data_path(), data::Layout::Toy, cfg.classes);
    const auto train = data::load_dataset(cfg.data_path(), data::Layout::Toy, data::Split::Train, cfg.classes);
    const auto test = data::load_dataset(cfg.data_path(), data::Layout::Toy, data::Split::Test, cfg.classes);
    log << "wrote " << train.size() + test.size() << " records to " << cfg.data_path() << " (" << train.size()
        << " train, " << test.size() << " test)\n";
    write_manifest(command_dir(cfg, "gen-data"), cfg,
                   {"gen-data", {}, {cfg.data_path() / "meta.json"},
                    {{"train_records", train.size()}, {"test_records", test.size()}}});
}

void cmd_train_fr(const RunConfig& cfg, const CommandOptions& options, std::ostream& log) {
    if (options.role.empty()) throw ConfigError("train-fr needs --role train or --role eval");
    const auto role = fr::parse_role(options.role);
    fr::validate_role_pair(cfg.fr_config(fr::Role::Train), cfg.fr_config(fr::Role::Eval));
    const auto train_records = load_split(cfg, data::Split::Train);
    const auto test_records = load_split(cfg, data::Split::Test);
    log << "training " << fr::role_name(role) << "-FR on " << train_records.size() << " records\n";
    fr::FRTrainingReport report;
    auto model = fr::train_fr(train_records, cfg.fr_config(role), role, &report);
    const auto [genuine, impostor] = separation(model, test_records);
    log << "  training accuracy " << report.training_accuracy << ", held-out genuine " << genuine << ", impostor "
        << impostor << "\n";
    const auto dir = command_dir(cfg, "train-fr-" + fr::role_name(role));
    const json details = {{"role", fr::role_name(role)},
                          {"training_accuracy", report.training_accuracy},
                          {"epoch_losses", report.epoch_losses},
                          {"heldout_genuine_cosine", genuine},
                          {"heldout_impostor_cosine", impostor}};
    write_json(dir / "report.json", details);
    if (genuine - impostor < cfg.fr_min_separation) {
        throw QualityGateError(fr::role_name(role) + "-FR separates held-out identities by " +
                               std::to_string(genuine - impostor) + ", below the required " +
                               std::to_string(cfg.fr_min_separation));
    }
    fs::create_directories(cfg.checkpoint_path());
    model.save(cfg.fr_path(role));
    write_manifest(dir, cfg,
                   {"train-fr", {cfg.data_path() / "meta.json"}, {cfg.fr_path(role), dir / "report.json"}, details});
}

std::optional<fs::path> newest_iteration(const fs::path& dir) {
    std::optional<fs::path> best;
    if (!fs::exists(dir)) return best;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("iter_", 0) == 0 && entry.path().extension() == ".ckpt") {
            if (!best || name > best->filename().string()) best = entry.path();
        }
    }
    return best;
}

void cmd_train(const RunConfig& cfg, const CommandOptions& options, std::ostream& log) {
    const auto train_fr = load_fr(cfg, fr::Role::Train);
    const auto records = load_split(cfg, data::Split::Train);
    std::optional<fs::path> resume;
    if (options.resume) {
        resume = newest_iteration(cfg.model_dir());
        if (!resume) throw MissingPrerequisiteError((cfg.model_dir() / "iter_*.ckpt").string(), "train");
        log << "resuming from " << *resume << "\n";
    }
    train::TrainCallbacks callbacks;
    callbacks.on_log = [&log](const train::StepMetrics& m) { log << train::to_json(m).dump() << "\n" << std::flush; };
    const auto result = train::train(records, train_fr, cfg.train_config(), cfg.model_dir(), callbacks, resume);
    log << "trained " << result.iterations << " iterations; final checkpoint " << result.final_checkpoint << "\n";
    write_manifest(command_dir(cfg, "train"), cfg,
                   {"train",
                    {cfg.fr_path(fr::Role::Train), cfg.data_path() / "meta.json"},
                    {result.final_checkpoint, cfg.model_dir() / "metrics.jsonl"},
                    {{"iterations", result.iterations}, {"resumed_from", resume ? resume->string() : ""}}});
}

void cmd_reconstruct(const RunConfig& cfg, const CommandOptions& options, std::ostream& log) {
    auto in = load_eval_inputs(cfg);
    const auto records = all_records(cfg);
    const auto& record = options.record.empty() ? records.front() : find_record(records, options.record);
    const auto bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, {record});
    torch::NoGradGuard no_grad;
    const auto tokens = enc::assemble_token_batch(bank.styles, in.model.model->identity_tokens(bank.id_embeddings));
    const auto output = in.model.model->generate(bank.onehot, tokens).image;
    const double eval_cos = fr::cosine(in.eval_fr.embed(output), bank.eval_embeddings);
    const double train_cos = fr::cosine(in.train_fr.embed(output), bank.id_embeddings);
    const auto dir = command_dir(cfg, "reconstruct") / record.name;
    fs::create_directories(dir);
    io::write_png_rgb(dir / "input.png", record.image);
    write_mask_png(dir / "mask.png", record.mask);
    write_tensor_png(dir / "output.png", output[0]);
    const json scores = {{"record", record.name},
                         {"identity_id", record.identity_id},
                         {"cosine", {{"train-FR", train_cos}, {"eval-FR", eval_cos}}}};
    write_json(dir / "scores.json", scores);
    log << "reconstructed " << record.name << ": eval-FR cosine " << eval_cos << ", train-FR cosine " << train_cos
        << "\n";
    write_manifest(dir, cfg,
                   {"reconstruct", eval_input_paths(cfg),
                    {dir / "input.png", dir / "mask.png", dir / "output.png", dir / "scores.json"}, scores});
}

std::pair<const data::FaceRecord*, const data::FaceRecord*> pick_pair(const std::vector<data::FaceRecord>& records,
                                                                      const CommandOptions& options) {
    const auto* attacker = options.attacker.empty() ? &records.front() : &find_record(records, options.attacker);
    const data::FaceRecord* target = nullptr;
    if (!options.target.empty()) {
        target = &find_record(records, options.target);
    } else {
        for (const auto& r : records) {
            if (r.identity_id != attacker->identity_id) {
                target = &r;
                break;
            }
        }
        if (target == nullptr) throw ValidationError("no record with an identity different from the attacker");
    }
    if (attacker->identity_id == target->identity_id) {
        throw ValidationError("attacker '" + attacker->name + "' and target '" + target->name +
                              "' share identity " + std::to_string(attacker->identity_id));
    }
    return {attacker, target};
}

std::optional<double> known_tau(const RunConfig& cfg) {
    const auto path = cfg.output_path() / "metrics.json";
    if (!fs::exists(path)) return std::nullopt;
    const auto doc = read_json(path);
    if (!doc.contains("tau")) return std::nullopt;
    return doc.at("tau").get<double>();
}

void cmd_swap(const RunConfig& cfg, const CommandOptions& options, std::ostream& log, bool style) {
    const auto records = all_records(cfg);
    const auto [attacker, target] = pick_pair(records, options);
    const auto set = style ? eval::parse_swap_set(options.swap_set) : eval::SwapSet::NoSwap;
    auto in = load_eval_inputs(cfg);
    const auto bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, {*attacker, *target});
    const std::vector<eval::AttackPair> pair{{0, 1}};
    const auto classes = eval::swap_classes(set, cfg.classes);
    torch::NoGradGuard no_grad;
    const auto own = eval::generate_pairs(in.model.model, bank, pair, {}, false);
    const auto swapped = eval::generate_pairs(in.model.model, bank, pair, classes, true);
    const auto emb = in.eval_fr.embed(swapped);
    const double score_target = fr::cosine(emb, bank.eval_embeddings[1]);
    const double score_attacker = fr::cosine(emb, bank.eval_embeddings[0]);
    const auto name = style ? "swap-style" : "swap-id";
    const auto dir = command_dir(cfg, name) / (attacker->name + "_to_" + target->name + (style ? "_" + options.swap_set : ""));
    fs::create_directories(dir);
    io::write_png_rgb(dir / "attacker.png", attacker->image);
    io::write_png_rgb(dir / "target.png", target->image);
    write_mask_png(dir / "attacker_mask.png", attacker->mask);
    write_tensor_png(dir / "own.png", own[0]);
    write_tensor_png(dir / "swapped.png", swapped[0]);
    write_difference_png(dir / "difference.png", own[0], swapped[0]);
    json scores = {{"attacker", attacker->name},
                   {"target", target->name},
                   {"swap_set", eval::swap_set_name(set)},
                   {"score_target", score_target},
                   {"score_attacker", score_attacker},
                   {"mean_abs_pixel_difference", (own - swapped).abs().mean().item<double>()}};
    if (const auto tau = known_tau(cfg)) {
        scores["tau"] = *tau;
        scores["accepted_as_target"] = fr::verify_score(score_target, *tau).accept;
    }
    write_json(dir / "scores.json", scores);
    log << name << " " << attacker->name << " -> " << target->name << ": eval-FR score vs target " << score_target
        << ", vs attacker " << score_attacker << "\n";
    write_manifest(dir, cfg,
                   {name, eval_input_paths(cfg),
                    {dir / "own.png", dir / "swapped.png", dir / "difference.png", dir / "scores.json"}, scores});
}

void cmd_eval_recon(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
    auto in = load_eval_inputs(cfg);
    const auto records = load_split(cfg, data::Split::Test);
    const auto bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, records);
    const auto eval_suite = eval::cosine_suite(in.model.model, bank, in.eval_fr);
    const auto train_bank = eval::make_bank(in.model.model, in.train_fr, in.train_fr, records);
    const auto train_suite = eval::cosine_suite(in.model.model, train_bank, in.train_fr);
    torch::Tensor recon;
    {
        torch::NoGradGuard no_grad;
        std::vector<eval::AttackPair> self;
        for (std::size_t i = 0; i < bank.size(); ++i) self.push_back({i, i});
        recon = eval::generate_pairs(in.model.model, bank, self, {}, false);
    }
    const double frechet = eval::frechet_feature_distance(bank.images, recon, in.eval_fr);
    const auto dir = command_dir(cfg, "eval-recon");
    std::ostringstream csv;
    csv << "record,identity_id,eval_fr_cosine,train_fr_cosine\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        csv << records[i].name << ',' << records[i].identity_id << ',' << fmt(eval_suite.scores[i]) << ','
            << fmt(train_suite.scores[i]) << '\n';
    }
    write_text(dir / "scores.csv", csv.str());
    const json metrics = {{"checkpoint", checkpoint_info(cfg)},
                          {"C_mean", eval_suite.mean},
                          {"per_model_scores", {{"eval-FR", eval_suite.mean}, {"train-FR", train_suite.mean}}},
                          {"frechet_distance", frechet},
                          {"records", records.size()}};
    write_json(dir / "metrics.json", metrics);
    update_metrics(cfg, metrics);
    log << "C_mean (eval-FR) " << eval_suite.mean << ", train-FR " << train_suite.mean << ", Frechet " << frechet
        << " over " << records.size() << " test records\n";
    write_manifest(dir, cfg, {"eval-recon", eval_input_paths(cfg), {dir / "scores.csv", dir / "metrics.json"}, metrics});
}

struct AttackSetup {
    double tau = 0.0;
    double empirical_far = 0.0;
    std::vector<eval::AttackPair> pairs;
    std::size_t impostor_count = 0;
};

AttackSetup attack_setup(const RunConfig& cfg, const eval::RecordBank& bank) {
    AttackSetup s;
    const auto impostors = eval::sample_impostor_pairs(bank.identity, static_cast<std::size_t>(cfg.impostor_pairs),
                                                       cfg.eval_seed);
    const auto scores = eval::impostor_scores(bank, impostors);
    s.tau = eval::calibrate_threshold(scores, cfg.far_target);
    s.empirical_far = eval::success_fraction(scores, s.tau);
    s.impostor_count = scores.size();
    s.pairs = eval::sample_attack_pairs(bank.identity, static_cast<std::size_t>(cfg.attack_pairs), cfg.eval_seed + 1);
    return s;
}

void cmd_eval_attack(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
    auto in = load_eval_inputs(cfg);
    const auto records = load_split(cfg, data::Split::Test);
    const auto bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, records);
    const auto setup = attack_setup(cfg, bank);
    const auto result = eval::attack_success_rate(in.model.model, bank, setup.pairs, in.eval_fr, setup.tau);
    const double literal = eval::success_fraction(result.attacker_scores, setup.tau);
    const auto dir = command_dir(cfg, "eval-attack");
    std::ostringstream csv;
    csv << "attacker,target,score_target,score_attacker,success\n";
    for (std::size_t i = 0; i < setup.pairs.size(); ++i) {
        csv << bank.names[setup.pairs[i].first] << ',' << bank.names[setup.pairs[i].second] << ','
            << fmt(result.target_scores[i]) << ',' << fmt(result.attacker_scores[i]) << ','
            << (result.success[i] ? 1 : 0) << '\n';
    }
    write_text(dir / "pairs.csv", csv.str());
    const json metrics = {{"checkpoint", checkpoint_info(cfg)},
                          {"tau", setup.tau},
                          {"far_target", cfg.far_target},
                          {"asr", result.asr}};
    const json details = {{"empirical_far", setup.empirical_far},
                          {"impostor_pairs", setup.impostor_count},
                          {"attack_pairs", setup.pairs.size()},
                          {"asr_vs_attacker_embedding", literal}};
    json full = metrics;
    full.update(details);
    write_json(dir / "metrics.json", full);
    update_metrics(cfg, metrics);
    log << "tau " << setup.tau << " at FAR " << cfg.far_target << " (empirical " << setup.empirical_far << " over "
        << setup.impostor_count << " impostor pairs); ASR " << result.asr << " over " << setup.pairs.size()
        << " pairs\n";
    write_manifest(dir, cfg, {"eval-attack", eval_input_paths(cfg), {dir / "pairs.csv", dir / "metrics.json"}, full});
}

void cmd_eval_sweep(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
    auto in = load_eval_inputs(cfg);
    const auto records = load_split(cfg, data::Split::Test);
    const auto bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, records);
    const auto setup = attack_setup(cfg, bank);
    const auto rows = eval::style_swap_sweep(in.model.model, bank, setup.pairs, in.eval_fr, setup.tau, in.eval_fr);
    const auto dir = command_dir(cfg, "eval-sweep");
    std::ostringstream csv;
    csv << "swap_set,asr,perceptual_distance\n";
    json sweep = json::array();
    for (const auto& row : rows) {
        csv << eval::swap_set_name(row.set) << ',' << fmt(row.asr) << ',' << fmt(row.perceptual_distance) << '\n';
        sweep.push_back({{"swap_set", eval::swap_set_name(row.set)},
                         {"asr", row.asr},
                         {"perceptual_distance", row.perceptual_distance}});
        log << std::left << std::setw(10) << eval::swap_set_name(row.set) << " ASR " << std::setw(8) << row.asr
            << " perceptual " << row.perceptual_distance << "\n";
    }
    write_text(dir / "sweep.csv", csv.str());
    const json metrics = {{"checkpoint", checkpoint_info(cfg)},
                          {"tau", setup.tau},
                          {"far_target", cfg.far_target},
                          {"sweep", sweep}};
    write_json(dir / "metrics.json", metrics);
    update_metrics(cfg, {{"checkpoint", metrics["checkpoint"]}, {"sweep", sweep}});
    write_manifest(dir, cfg, {"eval-sweep", eval_input_paths(cfg), {dir / "sweep.csv", dir / "metrics.json"}, metrics});
}

void cmd_attn_maps(const RunConfig& cfg, const CommandOptions& options, std::ostream& log) {
    auto in = load_eval_inputs(cfg);
    const auto test = load_split(cfg, data::Split::Test);
    const auto records = all_records(cfg);
    const auto& record = options.record.empty() ? records.front() : find_record(records, options.record);
    const auto bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, {record});
    torch::NoGradGuard no_grad;
    const auto tokens = enc::assemble_token_batch(bank.styles, in.model.model->identity_tokens(bank.id_embeddings));
    const auto out = in.model.model->generate(bank.onehot, tokens);
    const int token_count = static_cast<int>(tokens.size(1));
    std::vector<std::string> token_names = data::toy_class_names();
    token_names.resize(static_cast<std::size_t>(cfg.classes), "class");
    token_names.push_back("identity");
    json blocks = json::array();
    for (int b = 0; b < static_cast<int>(out.attention.size()); ++b) {
        json maps = json::array();
        for (int t = 0; t < token_count; ++t) maps.push_back(gen::attention_heatmap(out, t, b).values);
        blocks.push_back({{"grid", {out.attention_sizes[static_cast<std::size_t>(b)].first,
                                    out.attention_sizes[static_cast<std::size_t>(b)].second}},
                          {"maps", maps}});
    }
    // Identity-token mass over eyes, eyebrows and mouth across the test split.
    const auto test_bank = eval::make_bank(in.model.model, in.train_fr, in.eval_fr, test);
    std::vector<int> face_parts;
    if (cfg.classes == data::kToyClassCount) {
        face_parts = {static_cast<int>(data::ToyClass::Eyes), static_cast<int>(data::ToyClass::Eyebrows),
                      static_cast<int>(data::ToyClass::Mouth)};
    }
    json region = nullptr;
    if (!face_parts.empty()) {
        const auto mass = eval::attention_region_mass(in.model.model, test_bank, token_count - 1, face_parts);
        region = {{"classes", {"eyes", "eyebrows", "mouth"}},
                  {"identity_mass_fraction", mass.mass_fraction},
                  {"area_fraction", mass.area_fraction}};
        log << "identity-token attention inside eyes/eyebrows/mouth: " << mass.mass_fraction << " of its mass over "
            << mass.area_fraction << " of the area\n";
    }
    const auto dir = command_dir(cfg, "attn-maps") / record.name;
    fs::create_directories(dir);
    io::write_png_rgb(dir / "input.png", record.image);
    write_mask_png(dir / "mask.png", record.mask);
    write_tensor_png(dir / "output.png", out.image[0]);
    const json doc = {{"record", record.name},
                      {"height", out.image.size(2)},
                      {"width", out.image.size(3)},
                      {"tokens", token_names},
                      {"blocks", blocks},
                      {"region_mass", region}};
    write_json(dir / "attention.json", doc);
    log << "wrote attention maps for " << record.name << " (" << out.attention.size() << " blocks, " << token_count
        << " tokens)\n";
    write_manifest(dir, cfg,
                   {"attn-maps", eval_input_paths(cfg), {dir / "attention.json", dir / "output.png"},
                    {{"record", record.name}, {"region_mass", region}}});
}

// ---- plot ----------------------------------------------------------------------------------------

struct SweepCsvRow {
    std::string set;
    double asr = 0.0;
    double distance = 0.0;
};

std::vector<SweepCsvRow> read_sweep_csv(const fs::path& path) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    if (line != "swap_set,asr,perceptual_distance") throw IngestionError("'" + path.string() + "' has an unexpected header");
    std::vector<SweepCsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string set, asr, dist;
        std::getline(ss, set, ',');
        std::getline(ss, asr, ',');
        std::getline(ss, dist, ',');
        try {
            rows.push_back({set, std::stod(asr), std::stod(dist)});
        } catch (const std::logic_error&) {
            throw IngestionError("malformed row in '" + path.string() + "': " + line);
        }
    }
    if (rows.empty()) throw IngestionError("'" + path.string() + "' has no rows");
    return rows;
}

std::string sweep_svg(const std::vector<SweepCsvRow>& rows) {
    const double width = 720;
    const double height = 360;
    const double left = 60;
    const double right = 60;
    const double top = 40;
    const double bottom = 60;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    double max_d = 0.0;
    for (const auto& r : rows) max_d = std::max(max_d, r.distance);
    if (max_d <= 0.0) max_d = 1.0;
    const double group = plot_w / static_cast<double>(rows.size());
    const double bar = group * 0.35;
    std::ostringstream svg;
    svg << std::fixed << std::setprecision(2);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
        << "Attack success rate and perceptual distance per swap set</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double f = t / 4.0;
        const double y = top + plot_h * (1.0 - f);
        svg << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + plot_w << "\" y2=\"" << y
            << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\" fill=\"#1f77b4\">" << f
            << "</text>\n";
        svg << "<text x=\"" << left + plot_w + 6 << "\" y=\"" << y + 4 << "\" fill=\"#d62728\">"
            << std::setprecision(3) << f * max_d << std::setprecision(2) << "</text>\n";
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double x0 = left + group * static_cast<double>(i) + group * 0.15;
        const double ha = plot_h * std::clamp(rows[i].asr, 0.0, 1.0);
        const double hd = plot_h * rows[i].distance / max_d;
        svg << "<rect x=\"" << x0 << "\" y=\"" << top + plot_h - ha << "\" width=\"" << bar << "\" height=\"" << ha
            << "\" fill=\"#1f77b4\"><title>ASR " << rows[i].asr << "</title></rect>\n";
        svg << "<rect x=\"" << x0 + bar << "\" y=\"" << top + plot_h - hd << "\" width=\"" << bar << "\" height=\""
            << hd << "\" fill=\"#d62728\"><title>perceptual distance " << rows[i].distance << "</title></rect>\n";
        svg << "<text x=\"" << x0 + bar << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">"
            << rows[i].set << "</text>\n";
    }
    svg << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" fill=\"#1f77b4\" transform=\"rotate(-90 16 "
        << top + plot_h / 2 << ")\" text-anchor=\"middle\">ASR</text>\n";
    svg << "<text x=\"" << width - 12 << "\" y=\"" << top + plot_h / 2 << "\" fill=\"#d62728\" transform=\"rotate(90 "
        << width - 12 << " " << top + plot_h / 2 << ")\" text-anchor=\"middle\">perceptual distance</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

// Blends a [0,1]-normalized heatmap (red) over the image.
std::vector<std::uint8_t> overlay(const std::vector<std::uint8_t>& rgb, const std::vector<float>& map) {
    const auto [lo, hi] = std::minmax_element(map.begin(), map.end());
    const float span = *hi - *lo > 1e-12f ? *hi - *lo : 1.0f;
    std::vector<std::uint8_t> out(rgb.size());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const float a = 0.65f * (map[i] - *lo) / span;
        const float heat[3] = {255.0f, 255.0f * std::clamp(2.0f * (a / 0.65f) - 1.0f, 0.0f, 1.0f), 0.0f};
        for (int c = 0; c < 3; ++c) {
            const float v = (1.0f - a) * rgb[i * 3 + static_cast<std::size_t>(c)] + a * heat[c];
            out[i * 3 + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 255.0f)));
        }
    }
    return out;
}

void cmd_plot(const RunConfig& cfg, const CommandOptions&, std::ostream& log) {
    const auto sweep_csv = cfg.output_path() / "eval-sweep" / "sweep.csv";
    require(sweep_csv, "eval-sweep");
    const auto dir = command_dir(cfg, "plot");
    std::vector<fs::path> inputs{sweep_csv};
    std::vector<fs::path> outputs{dir / "sweep.svg"};
    write_text(dir / "sweep.svg", sweep_svg(read_sweep_csv(sweep_csv)));
    const auto attn_root = cfg.output_path() / "attn-maps";
    int overlays = 0;
    if (fs::exists(attn_root)) {
        std::vector<fs::path> record_dirs;
        for (const auto& entry : fs::directory_iterator(attn_root)) {
            if (entry.is_directory() && fs::exists(entry.path() / "attention.json")) record_dirs.push_back(entry.path());
        }
        std::sort(record_dirs.begin(), record_dirs.end());
        for (const auto& rd : record_dirs) {
            const auto doc = read_json(rd / "attention.json");
            int h = 0;
            int w = 0;
            const auto rgb = io::read_png_rgb8(rd / "output.png", h, w);
            const auto out_dir = dir / "attention" / rd.filename();
            fs::create_directories(out_dir);
            const auto names = doc.at("tokens").get<std::vector<std::string>>();
            const auto& blocks = doc.at("blocks");
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                const auto& maps = blocks[b].at("maps");
                for (std::size_t t = 0; t < maps.size(); ++t) {
                    const auto values = maps[t].get<std::vector<float>>();
                    if (values.size() != static_cast<std::size_t>(h) * w) {
                        throw IngestionError("attention map size does not match " + (rd / "output.png").string());
                    }
                    const auto path = out_dir / ("block" + std::to_string(b) + "_" + names.at(t) + ".png");
                    io::write_png_rgb8(path, h, w, overlay(rgb, values));
                    outputs.push_back(path);
                    ++overlays;
                }
            }
            inputs.push_back(rd / "attention.json");
            inputs.push_back(rd / "output.png");
        }
    }
    log << "wrote " << (dir / "sweep.svg") << " and " << overlays << " attention overlays\n";
    if (overlays == 0) log << "no attention maps found; run `idsis attn-maps` to add overlays\n";
    write_manifest(dir, cfg, {"plot", inputs, outputs, {{"overlays", overlays}}});
}

}  // namespace

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot read '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IngestionError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const json& value) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) throw IngestionError("cannot write '" + path.string() + "'");
        out << value.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"gen-data",   "train-fr",    "train",      "reconstruct",
                                                "swap-id",    "swap-style",  "eval-recon", "eval-attack",
                                                "eval-sweep", "attn-maps",   "plot"};
    return names;
}

void run_command(const std::string& name, const RunConfig& cfg, const CommandOptions& options, std::ostream& log) {
    OutputLock lock(cfg.output_path());
    if (name == "gen-data") return cmd_gen_data(cfg, options, log);
    if (name == "train-fr") return cmd_train_fr(cfg, options, log);
    if (name == "train") return cmd_train(cfg, options, log);
    if (name == "reconstruct") return cmd_reconstruct(cfg, options, log);
    if (name == "swap-id") return cmd_swap(cfg, options, log, false);
    if (name == "swap-style") return cmd_swap(cfg, options, log, true);
    if (name == "eval-recon") return cmd_eval_recon(cfg, options, log);
    if (name == "eval-attack") return cmd_eval_attack(cfg, options, log);
    if (name == "eval-sweep") return cmd_eval_sweep(cfg, options, log);
    if (name == "attn-maps") return cmd_attn_maps(cfg, options, log);
    if (name == "plot") return cmd_plot(cfg, options, log);
    throw ConfigError("unknown command '" + name + "'");
}

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"Identity-conditioned semantic image synthesis on toy faces", "idsis"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    std::map<std::string, std::string> overrides;
    for (const auto& key : config_keys()) {
        std::string flag = key.name;
        std::replace(flag.begin(), flag.end(), '_', '-');
        app.add_option_function<std::string>(
               "--" + flag, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; },
               key.doc + " [" + key.type + "]")
            ->group("Config overrides");
    }
    CommandOptions options;
    const std::map<std::string, std::string> help{
        {"gen-data", "render the toy dataset"},
        {"train-fr", "train the train-FR or eval-FR embedder"},
        {"train", "train encoders, generator and discriminator"},
        {"reconstruct", "reconstruct one record and score it under both FR models"},
        {"swap-id", "generate with the attacker's mask and styles and the target's identity"},
        {"swap-style", "identity swap plus style codes of a swap set taken from the target"},
        {"eval-recon", "mean reconstruction cosine and Frechet distance on the test split"},
        {"eval-attack", "calibrate tau and measure the attack success rate"},
        {"eval-sweep", "attack success rate and perceptual distance per swap set"},
        {"attn-maps", "cross-attention maps for one record"},
        {"plot", "render the sweep chart and attention overlays from emitted files"}};
    for (const auto& name : command_names()) {
        auto* sub = app.add_subcommand(name, help.at(name));
        if (name == "train-fr") sub->add_option("--role", options.role, "train or eval")->required();
        if (name == "train") sub->add_flag("--resume", options.resume, "continue from the newest iteration checkpoint");
        if (name == "reconstruct" || name == "attn-maps") {
            sub->add_option("--record", options.record, "record name (default: first test record)");
        }
        if (name == "swap-id" || name == "swap-style") {
            sub->add_option("--attacker", options.attacker, "record providing mask and styles");
            sub->add_option("--target", options.target, "record providing the identity");
        }
        if (name == "swap-style") {
            sub->add_option("--swap-set", options.swap_set, "NoSwap, Skin, Eyes, Eyebrows, Mouth, Hair or FullSwap");
        }
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::Validation);
    }
    const auto command = app.get_subcommands().front()->get_name();
    try {
        const fs::path path(config_path);
        const auto cfg = resolve_config(config_path.empty() ? nullptr : &path, overrides, std::getenv("IDSIS_SEED"));
        const char* threads = std::getenv("IDSIS_THREADS");
        torch::set_num_threads(threads != nullptr ? std::max(1, std::atoi(threads)) : 1);
        run_command(command, cfg, options, std::cout);
        return 0;
    } catch (const Error& e) {
        std::cerr << "idsis " << command << ": " << e.what() << '\n';
        return static_cast<int>(e.exit_code());
    } catch (const c10::Error& e) {
        std::cerr << "idsis " << command << ": tensor error: " << e.what_without_backtrace() << '\n';
        return static_cast<int>(ExitCode::Numeric);
    } catch (const std::exception& e) {
        std::cerr << "idsis " << command << ": " << e.what() << '\n';
        return static_cast<int>(ExitCode::Validation);
    }
}

}  // namespace idsis::cli
