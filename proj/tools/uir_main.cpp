// Command-line front end: gen-data -> train -> filter-unlabeled -> train
// -> eval / analyze-*, plus a verify-gradients self test.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <uir/uir.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

json config_to_json(const uir::TrainConfig& c) {
    return json{{"lr", c.lr},
                {"momentum", c.momentum},
                {"batch_size", c.batch_size},
                {"labeled_fraction", c.labeled_fraction},
                {"uir_weight", c.uir_weight},
                {"margin", c.margin},
                {"scale", c.scale},
                {"stabilized", c.stabilized},
                {"supervised_epochs", c.supervised_epochs},
                {"plateau_tolerance", c.plateau_tolerance},
                {"plateau_patience", c.plateau_patience},
                {"semisup_epochs", c.semisup_epochs},
                {"seed", c.seed},
                {"refilter_each_epoch", c.refilter_each_epoch},
                {"filter_threshold", c.filter_threshold},
                {"hidden_widths", c.hidden_widths},
                {"embed_dim", c.embed_dim},
                {"n_classes", c.n_classes}};
}

void write_manifest(const std::string& artifact, const std::string& command,
                    const json& config, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs, std::uint64_t seed,
                    double wall_seconds) {
    json m{{"command", command}, {"version", uir::kVersion},   {"seed", seed},
           {"config", config},   {"inputs", inputs},           {"outputs", outputs},
           {"wall_seconds", wall_seconds}};
    std::ofstream os(artifact + ".manifest.json");
    if (!os) throw uir::IoError("manifest: cannot write " + artifact + ".manifest.json");
    os << m.dump(2) << '\n';
}

void emit(const json& doc, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << doc.dump(2) << '\n';
        return;
    }
    std::ofstream os(out_path);
    if (!os) throw uir::IoError("report: cannot write " + out_path);
    os << doc.dump(2) << '\n';
}

json epoch_to_json(const uir::EpochRecord& r) {
    return json{{"epoch", r.epoch},
                {"supervised_loss", r.supervised_loss},
                {"uir_loss", r.uir_loss},
                {"combined_loss", r.combined_loss},
                {"train_accuracy", r.train_accuracy},
                {"wall_seconds", r.wall_seconds},
                {"steps", r.steps},
                {"skipped_degenerate", r.skipped_degenerate}};
}

json log_to_json(const uir::TrainLog& log) {
    json epochs = json::array();
    for (const auto& r : log.epochs) epochs.push_back(epoch_to_json(r));
    return json{{"phase", log.phase},
                {"batch_size", log.batch_size},
                {"stopped_early", log.stopped_early},
                {"warnings", log.warnings},
                {"epochs", epochs}};
}

// Model scale used at train time, recoverable from the checkpoint config.
double checkpoint_scale(const uir::LoadedCheckpoint& ck, double flag_value) {
    if (flag_value > 0.0) return flag_value;
    if (!ck.config_json.empty()) {
        auto parsed = json::parse(ck.config_json, nullptr, false);
        if (!parsed.is_discarded() && parsed.contains("scale") && parsed["scale"].is_number()) {
            return parsed["scale"].get<double>();
        }
    }
    return 64.0;
}

struct GenOpts {
    std::string out_dir;
    std::uint64_t seed = 1;
    std::size_t n_known = 50;
    std::size_t n_unknown = 100;
    std::size_t n_heldout = 50;
    std::size_t d_input = 32;
    std::size_t per_identity = 200;
    std::size_t unlabeled_total = 4000;
    double zipf = 1.5;
    double noise_sigma = 0.1;
    std::size_t heldout_per_identity = 8;
};

int run_gen_data(const GenOpts& o) {
    auto t0 = Clock::now();
    fs::create_directories(o.out_dir);
    auto universe = uir::gen_universe(o.n_known, o.n_unknown + o.n_heldout, o.d_input, o.seed);

    auto labeled = uir::sample_labeled(universe, o.per_identity, o.noise_sigma, o.seed);
    auto unlabeled = uir::sample_unlabeled(universe, o.unlabeled_total, o.zipf, o.noise_sigma,
                                           o.seed, {0, o.n_unknown});
    auto heldout = uir::sample_unknown_balanced(universe, {o.n_unknown, o.n_unknown + o.n_heldout},
                                                o.heldout_per_identity, o.noise_sigma, o.seed);

    std::string lab_path = (fs::path(o.out_dir) / "labeled.uirset").string();
    std::string unl_path = (fs::path(o.out_dir) / "unlabeled.uirset").string();
    std::string held_path = (fs::path(o.out_dir) / "heldout.uirset").string();
    uir::write_dataset(lab_path, labeled);
    uir::write_dataset(unl_path, unlabeled);
    uir::write_dataset(held_path, heldout);

    json cfg{{"n_known", o.n_known},         {"n_unknown", o.n_unknown},
             {"n_heldout", o.n_heldout},     {"d_input", o.d_input},
             {"per_identity", o.per_identity}, {"unlabeled_total", o.unlabeled_total},
             {"zipf", o.zipf},               {"noise_sigma", o.noise_sigma},
             {"heldout_per_identity", o.heldout_per_identity}};
    double wall = seconds_since(t0);
    for (const auto& p : {lab_path, unl_path, held_path}) {
        write_manifest(p, "gen-data", cfg, {}, {lab_path, unl_path, held_path}, o.seed, wall);
    }
    std::cout << json{{"labeled", lab_path},
                      {"unlabeled", unl_path},
                      {"heldout", held_path},
                      {"labeled_count", labeled.count()},
                      {"unlabeled_count", unlabeled.count()},
                      {"heldout_count", heldout.count()}}
                     .dump(2)
              << '\n';
    return 0;
}

struct TrainOpts {
    std::string phase;
    std::string labeled_path;
    std::string unlabeled_path;
    std::string checkpoint_in;
    std::string checkpoint_out;
    std::string log_out;
    std::size_t workers = 0;
    bool quiet = false;
    uir::TrainConfig cfg;
};

int run_train(const TrainOpts& o) {
    auto t0 = Clock::now();
    auto labeled = uir::read_dataset(o.labeled_path);
    uir::EpochCallback cb;
    if (!o.quiet) {
        cb = [](const uir::EpochRecord& r) { std::cout << epoch_to_json(r).dump() << '\n'; };
    }

    uir::EmbeddingModel model;
    uir::TrainLog log;
    uir::TrainPhase phase_tag;
    std::vector<std::string> inputs{o.labeled_path};
    if (o.phase == "supervised") {
        std::tie(model, log) = uir::train_supervised(o.cfg, labeled, o.workers, cb);
        phase_tag = uir::TrainPhase::supervised;
    } else {
        auto loaded = uir::load_checkpoint(o.checkpoint_in);
        auto unlabeled = uir::read_dataset(o.unlabeled_path);
        inputs.push_back(o.unlabeled_path);
        inputs.push_back(o.checkpoint_in);
        std::tie(model, log) = uir::train_semisupervised(o.cfg, std::move(loaded.model), labeled,
                                                         unlabeled, o.workers, cb);
        phase_tag = uir::TrainPhase::semisupervised;
        for (const auto& w : log.warnings) std::cerr << "warning: " << w << '\n';
    }

    uir::save_checkpoint(model, phase_tag, config_to_json(o.cfg).dump(), o.checkpoint_out);
    if (!o.log_out.empty()) emit(log_to_json(log), o.log_out);
    write_manifest(o.checkpoint_out, "train", config_to_json(o.cfg), inputs, {o.checkpoint_out},
                   o.cfg.seed, seconds_since(t0));
    return 0;
}

struct FilterOpts {
    std::string checkpoint;
    std::string in_path;
    std::string out_path;
    double threshold = 0.9;
    double scale = 0.0;  // 0 = take from checkpoint config
    std::size_t workers = 0;
};

int run_filter(const FilterOpts& o) {
    auto t0 = Clock::now();
    auto ck = uir::load_checkpoint(o.checkpoint);
    auto pool = uir::read_dataset(o.in_path);
    double scale = checkpoint_scale(ck, o.scale);
    auto [kept, report] = uir::filter_overlap(ck.model, pool, o.threshold, scale, o.workers);
    uir::write_dataset(o.out_path, kept);

    json doc{{"kept", report.kept},
             {"discarded", report.discarded},
             {"threshold", report.threshold},
             {"scale", scale},
             {"histogram", report.histogram},
             {"input", o.in_path},
             {"output", o.out_path}};
    std::cout << doc.dump(2) << '\n';
    json cfg{{"threshold", o.threshold}, {"scale", scale}};
    write_manifest(o.out_path, "filter-unlabeled", cfg, {o.checkpoint, o.in_path}, {o.out_path},
                   0, seconds_since(t0));
    return 0;
}

struct EvalOpts {
    std::string checkpoint;
    std::string data_path;
    std::string out_path;
    std::vector<double> fars{0.01, 0.001};
    std::string postprocess = "N1F1";
    std::size_t impostor_multiple = 10;
    std::uint64_t protocol_seed = 7;
    std::vector<double> thresholds;
    double scale = 0.0;
    std::size_t workers = 0;
};

int run_eval(const EvalOpts& o) {
    auto t0 = Clock::now();
    auto ck = uir::load_checkpoint(o.checkpoint);
    auto data = uir::read_dataset(o.data_path);
    auto post = uir::parse_postprocess(o.postprocess);
    double scale = checkpoint_scale(ck, o.scale);

    uir::Mat raw = uir::embed_features(ck.model, data.inputs, o.workers);
    uir::Mat features;
    if (post.flip) {
        uir::Mat alt = uir::embed_features(ck.model, uir::alternate_view(data.inputs), o.workers);
        features = uir::postprocess_features(raw, &alt, post);
    } else {
        features = uir::postprocess_features(raw, nullptr, post);
    }

    auto protocol = uir::build_protocol(data, o.impostor_multiple, o.protocol_seed);
    auto [genuine, impostor] = uir::score_pairs(features, protocol);

    uir::MetricsReport rep;
    rep.postprocess = uir::postprocess_tag(post);
    rep.genuine_pairs = protocol.genuine.size();
    rep.impostor_pairs = protocol.impostor.size();
    for (double far : o.fars) rep.tar_at_far.emplace_back(far, uir::tar_at_far(genuine, impostor, far));
    rep.avg_center_distance = uir::center_sparsity(ck.model.head);
    auto thresholds = o.thresholds.empty() ? uir::default_activation_thresholds() : o.thresholds;
    auto act = uir::activation_stats(ck.model, data, thresholds, scale, o.workers);
    rep.activation_cdf = act.cdf;
    rep.mean_activation = act.mean;

    json tar = json::array();
    for (const auto& [far, r] : rep.tar_at_far) {
        json t{{"far", far}, {"tar", r.tar}};
        if (std::isinf(r.threshold)) {
            t["threshold"] = "inf";
        } else {
            t["threshold"] = r.threshold;
        }
        tar.push_back(t);
    }
    json cdf = json::array();
    for (const auto& [t, f] : rep.activation_cdf) cdf.push_back(json{{"threshold", t}, {"fraction", f}});
    json doc{{"postprocess", rep.postprocess},
             {"tar_at_far", tar},
             {"genuine_pairs", rep.genuine_pairs},
             {"impostor_pairs", rep.impostor_pairs},
             {"avg_center_distance", rep.avg_center_distance},
             {"activation_cdf", cdf},
             {"mean_activation", rep.mean_activation},
             {"checkpoint", o.checkpoint},
             {"data", o.data_path}};
    emit(doc, o.out_path);
    if (!o.out_path.empty()) {
        json cfg{{"far", o.fars},
                 {"postprocess", o.postprocess},
                 {"impostor_multiple", o.impostor_multiple},
                 {"protocol_seed", o.protocol_seed},
                 {"scale", scale}};
        write_manifest(o.out_path, "eval", cfg, {o.checkpoint, o.data_path}, {o.out_path},
                       o.protocol_seed, seconds_since(t0));
    }
    return 0;
}

int run_analyze_centers(const std::string& checkpoint, const std::string& out_path) {
    auto ck = uir::load_checkpoint(checkpoint);
    json doc{{"avg_center_distance", uir::center_sparsity(ck.model.head)},
             {"rows", ck.model.n_known()},
             {"checkpoint", checkpoint}};
    emit(doc, out_path);
    return 0;
}

struct ActOpts {
    std::string checkpoint;
    std::string data_path;
    std::string out_path;
    std::vector<double> thresholds;
    double scale = 0.0;
    std::size_t workers = 0;
};

int run_analyze_activations(const ActOpts& o) {
    auto ck = uir::load_checkpoint(o.checkpoint);
    auto data = uir::read_dataset(o.data_path);
    double scale = checkpoint_scale(ck, o.scale);
    auto thresholds = o.thresholds.empty() ? uir::default_activation_thresholds() : o.thresholds;
    auto act = uir::activation_stats(ck.model, data, thresholds, scale, o.workers);
    json cdf = json::array();
    for (const auto& [t, f] : act.cdf) cdf.push_back(json{{"threshold", t}, {"fraction", f}});
    json doc{{"cdf", cdf},
             {"mean_activation", act.mean},
             {"samples", data.count()},
             {"scale", scale},
             {"checkpoint", o.checkpoint},
             {"data", o.data_path}};
    emit(doc, o.out_path);
    return 0;
}

int run_verify_gradients(std::uint64_t seed, std::size_t instances) {
    auto reports = uir::run_gradient_checks(seed, instances);
    double overall = 0.0;
    bool all_pass = true;
    json suites = json::array();
    for (const auto& r : reports) {
        overall = std::max(overall, r.max_rel_err);
        all_pass = all_pass && r.pass();
        suites.push_back(json{{"name", r.name},
                              {"instances", r.instances},
                              {"max_rel_err", r.max_rel_err},
                              {"tolerance", r.tolerance},
                              {"pass", r.pass()}});
    }
    bool ok = all_pass && overall < 1e-4;
    std::cout << json{{"suites", suites}, {"max_relative_error", overall}, {"pass", ok}}.dump(2)
              << '\n';
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised identity-embedding training with unknown-identity rejection"};
    app.require_subcommand(1);
    // Config files address subcommand options through a [subcommand] section;
    // flags given on the command line take precedence. Fallthrough lets
    // --config appear after the subcommand name; unknown keys are errors.
    app.fallthrough();
    app.allow_config_extras(false);
    app.set_config("--config", "", "Config file (INI/TOML, keys in a [subcommand] section)");

    GenOpts gen;
    auto* sub_gen = app.add_subcommand("gen-data", "Generate a synthetic identity dataset triple");
    sub_gen->add_option("--out-dir", gen.out_dir, "Output directory")->required();
    sub_gen->add_option("--seed", gen.seed, "Generation seed");
    sub_gen->add_option("--n-known", gen.n_known, "Known identities");
    sub_gen->add_option("--n-unknown", gen.n_unknown, "Unknown identities in the unlabeled pool");
    sub_gen->add_option("--n-heldout", gen.n_heldout, "Disjoint unknown identities held out for eval");
    sub_gen->add_option("--d-input", gen.d_input, "Input dimensionality");
    sub_gen->add_option("--per-identity", gen.per_identity, "Labeled samples per known identity");
    sub_gen->add_option("--unlabeled-total", gen.unlabeled_total, "Unlabeled pool size");
    sub_gen->add_option("--zipf", gen.zipf, "Zipf exponent for unlabeled identity counts");
    sub_gen->add_option("--noise-sigma", gen.noise_sigma, "Sample noise around centers");
    sub_gen->add_option("--heldout-per-identity", gen.heldout_per_identity,
                        "Held-out samples per identity");

    TrainOpts tr;
    auto* sub_tr = app.add_subcommand("train", "Train a phase (supervised or semisup)");
    sub_tr->add_option("--phase", tr.phase, "supervised or semisup")
        ->required()
        ->check(CLI::IsMember({"supervised", "semisup"}));
    sub_tr->add_option("--labeled", tr.labeled_path, "Labeled dataset")->required();
    sub_tr->add_option("--unlabeled", tr.unlabeled_path, "Filtered unlabeled dataset (semisup)");
    sub_tr->add_option("--checkpoint-in", tr.checkpoint_in, "Checkpoint to continue from");
    sub_tr->add_option("--checkpoint-out", tr.checkpoint_out, "Checkpoint to write")->required();
    sub_tr->add_option("--log-out", tr.log_out, "Training log file (JSON)");
    sub_tr->add_option("--workers", tr.workers, "Worker threads (0 = all cores)");
    sub_tr->add_flag("--quiet", tr.quiet, "Suppress per-epoch output");
    sub_tr->add_option("--lr", tr.cfg.lr, "Learning rate");
    sub_tr->add_option("--momentum", tr.cfg.momentum, "SGD momentum");
    sub_tr->add_option("--batch-size", tr.cfg.batch_size, "Batch size (both phases)");
    sub_tr->add_option("--labeled-fraction", tr.cfg.labeled_fraction,
                       "Labeled share of each semisup batch");
    sub_tr->add_option("--uir-weight", tr.cfg.uir_weight, "Weight w of the rejection loss");
    sub_tr->add_option("--margin", tr.cfg.margin, "Additive angular margin");
    sub_tr->add_option("--scale", tr.cfg.scale, "Logit scale");
    sub_tr->add_flag("--stabilized,!--no-stabilized", tr.cfg.stabilized,
                     "Use the double-softmax rejection loss");
    sub_tr->add_option("--supervised-epochs", tr.cfg.supervised_epochs, "Phase-1 epoch cap");
    sub_tr->add_option("--plateau-tolerance", tr.cfg.plateau_tolerance, "Convergence tolerance");
    sub_tr->add_option("--plateau-patience", tr.cfg.plateau_patience, "Plateau epochs before stop");
    sub_tr->add_option("--semisup-epochs", tr.cfg.semisup_epochs, "Phase-2 epochs");
    sub_tr->add_option("--seed", tr.cfg.seed, "Training seed");
    sub_tr->add_flag("--refilter-each-epoch", tr.cfg.refilter_each_epoch,
                     "Re-run overlap filtering against the current model every epoch");
    sub_tr->add_option("--filter-threshold", tr.cfg.filter_threshold,
                       "Discard threshold used when refiltering");
    sub_tr->add_option("--hidden", tr.cfg.hidden_widths, "Hidden layer widths (a single 0 = none)");
    sub_tr->add_option("--embed-dim", tr.cfg.embed_dim, "Embedding dimensionality");
    sub_tr->add_option("--n-classes", tr.cfg.n_classes, "Known classes (0 = infer)");

    FilterOpts fo;
    auto* sub_fi = app.add_subcommand("filter-unlabeled", "Drop unlabeled samples claimed by a known identity");
    sub_fi->add_option("--checkpoint", fo.checkpoint, "Supervised checkpoint")->required();
    sub_fi->add_option("--in", fo.in_path, "Unlabeled dataset")->required();
    sub_fi->add_option("--out", fo.out_path, "Filtered dataset")->required();
    sub_fi->add_option("--threshold", fo.threshold, "Max-activation discard threshold");
    sub_fi->add_option("--scale", fo.scale, "Logit scale (0 = from checkpoint)");
    sub_fi->add_option("--workers", fo.workers, "Worker threads (0 = all cores)");

    EvalOpts ev;
    auto* sub_ev = app.add_subcommand("eval", "Verification metrics on a held-out set");
    sub_ev->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
    sub_ev->add_option("--data", ev.data_path, "Held-out dataset with identity labels")->required();
    sub_ev->add_option("--out", ev.out_path, "Report file (default stdout)");
    sub_ev->add_option("--far", ev.fars, "FAR targets");
    sub_ev->add_option("--postprocess", ev.postprocess, "Feature postprocessing tag N{0,1}F{0,1}");
    sub_ev->add_option("--impostor-multiple", ev.impostor_multiple,
                       "Impostor pairs per genuine pair");
    sub_ev->add_option("--protocol-seed", ev.protocol_seed, "Impostor sampling seed");
    sub_ev->add_option("--thresholds", ev.thresholds, "Activation CDF thresholds");
    sub_ev->add_option("--scale", ev.scale, "Logit scale (0 = from checkpoint)");
    sub_ev->add_option("--workers", ev.workers, "Worker threads (0 = all cores)");

    std::string ac_checkpoint, ac_out;
    auto* sub_ac = app.add_subcommand("analyze-centers", "Average pairwise center distance");
    sub_ac->add_option("--checkpoint", ac_checkpoint, "Checkpoint")->required();
    sub_ac->add_option("--out", ac_out, "Report file (default stdout)");

    ActOpts ao;
    auto* sub_aa = app.add_subcommand("analyze-activations",
                                      "Max-activation CDF and mean on a dataset");
    sub_aa->add_option("--checkpoint", ao.checkpoint, "Checkpoint")->required();
    sub_aa->add_option("--data", ao.data_path, "Dataset")->required();
    sub_aa->add_option("--out", ao.out_path, "Report file (default stdout)");
    sub_aa->add_option("--thresholds", ao.thresholds, "CDF thresholds");
    sub_aa->add_option("--scale", ao.scale, "Logit scale (0 = from checkpoint)");
    sub_aa->add_option("--workers", ao.workers, "Worker threads (0 = all cores)");

    std::uint64_t vg_seed = 1;
    std::size_t vg_instances = 100;
    auto* sub_vg = app.add_subcommand("verify-gradients", "Finite-difference gradient self test");
    sub_vg->add_option("--seed", vg_seed, "Instance seed");
    sub_vg->add_option("--instances", vg_instances, "Instances per suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (sub_gen->parsed()) return run_gen_data(gen);
        if (sub_tr->parsed()) {
            std::erase(tr.cfg.hidden_widths, std::size_t{0});
            if (tr.phase == "semisup" && tr.checkpoint_in.empty()) {
                std::cerr << "usage error: --phase semisup requires --checkpoint-in\n";
                return 1;
            }
            if (tr.phase == "semisup" && tr.unlabeled_path.empty()) {
                std::cerr << "usage error: --phase semisup requires --unlabeled\n";
                return 1;
            }
            return run_train(tr);
        }
        if (sub_fi->parsed()) return run_filter(fo);
        if (sub_ev->parsed()) return run_eval(ev);
        if (sub_ac->parsed()) return run_analyze_centers(ac_checkpoint, ac_out);
        if (sub_aa->parsed()) return run_analyze_activations(ao);
        if (sub_vg->parsed()) return run_verify_gradients(vg_seed, vg_instances);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
