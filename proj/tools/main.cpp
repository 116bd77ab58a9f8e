#include <torch/torch.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "commands.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/profiles.hpp"

namespace {

using namespace mitodpm;
using namespace mitodpm::cli;

constexpr int kExitRuntime = 1;
constexpr int kExitValidation = 2;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Replaces `--config FILE` with the file's key=value lines as long options.
// Keys also given explicitly on the command line are dropped so flags win.
// Done by hand because the parser only reads config files for the top-level app.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::set<std::string> explicit_keys;
    for (const auto& a : args) {
        if (a.rfind("--", 0) == 0) explicit_keys.insert(a.substr(2, a.find('=') - 2));
    }
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string file;
        if (args[i] == "--config") {
            if (i + 1 == args.size()) throw ValidationError("--config needs a file");
            file = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
        } else {
            out.push_back(args[i]);
            continue;
        }
        std::ifstream in(file);
        if (!in) throw ValidationError("cannot read config file " + file);
        std::string line;
        for (int number = 1; std::getline(in, line); ++number) {
            line = trim(line);
            if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ValidationError(file + ":" + std::to_string(number) + ": expected key=value");
            }
            auto key = trim(line.substr(0, eq));
            std::replace(key.begin(), key.end(), '_', '-');
            auto value = trim(line.substr(eq + 1));
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
            if (key == "config") throw ValidationError(file + ":" + std::to_string(number) + ": config files do not nest");
            if (!explicit_keys.contains(key)) out.push_back("--" + key + "=" + value);
        }
    }
    return out;
}

// Options left unset on the command line and in the config file fall back to
// the selected profile.
template <typename T>
T pick(const std::optional<T>& value, const T& fallback) {
    return value ? *value : fallback;
}

struct Common {
    std::string profile = "desk";
    std::optional<std::string> out;
    std::string runs_root = "runs";
    bool force = false;
    std::string config;

    void attach(CLI::App* cmd, bool with_out = true) {
        // Consumed by expand_config before parsing; declared for --help.
        cmd->add_option("--config", config, "key=value file; keys are long option names, flags override it");
        cmd->add_option("--profile", profile, "desk or full")->capture_default_str();
        if (!with_out) return;
        cmd->add_option("--out", out, "output directory (default: <runs-root>/<timestamp>-<config hash>)");
        cmd->add_option("--runs-root", runs_root, "parent of generated run directories")->capture_default_str();
        cmd->add_flag("--force", force, "write into a non-empty output directory");
    }

    RunLocation location() const {
        RunLocation loc;
        if (out) loc.out = *out;
        loc.runs_root = runs_root;
        loc.force = force;
        return loc;
    }
};

void report(const fs::path& dir) { std::cout << dir.string() << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Condition-controlled diffusion experiments on cell patches"};
    app.require_subcommand(1);
    app.set_version_flag("--version", code_version());
    int threads = 0;
    app.add_option("--threads", threads, "intra-op threads (0: library default)");

    // make-toy
    Common toy_common;
    std::optional<int> toy_n, toy_side;
    std::uint64_t toy_seed = 0;
    int toy_slides = 4;
    auto* make_toy = app.add_subcommand("make-toy", "render a synthetic annotated patch set");
    toy_common.attach(make_toy);
    make_toy->add_option("--n", toy_n, "number of patches");
    make_toy->add_option("--seed", toy_seed)->capture_default_str();
    make_toy->add_option("--side", toy_side, "patch side in pixels");
    make_toy->add_option("--slides", toy_slides, "synthetic slides to spread patches over")->capture_default_str();

    // train-dpm
    Common dpm_common;
    std::string dpm_data;
    std::optional<std::string> dpm_resume;
    std::optional<int> dpm_timesteps, dpm_base, dpm_depth, dpm_cond_width, dpm_time_width, dpm_batch;
    std::optional<double> dpm_beta_start, dpm_beta_end, dpm_lr, dpm_ema;
    std::optional<std::int64_t> dpm_steps;
    std::uint64_t dpm_seed = 0;
    bool dpm_binary = false;
    int dpm_log_every = 50, dpm_ckpt_every = 0;
    auto* train_dpm = app.add_subcommand("train-dpm", "train the condition-controlled diffusion model");
    dpm_common.attach(train_dpm);
    train_dpm->add_option("--data", dpm_data, "annotation table")->required();
    train_dpm->add_option("--resume", dpm_resume, "checkpoint to continue from");
    train_dpm->add_option("--timesteps", dpm_timesteps);
    train_dpm->add_option("--beta-start", dpm_beta_start);
    train_dpm->add_option("--beta-end", dpm_beta_end);
    train_dpm->add_option("--base-channels", dpm_base);
    train_dpm->add_option("--depth", dpm_depth);
    train_dpm->add_option("--cond-width", dpm_cond_width);
    train_dpm->add_option("--time-width", dpm_time_width);
    train_dpm->add_option("--lr", dpm_lr);
    train_dpm->add_option("--batch-size", dpm_batch);
    train_dpm->add_option("--steps", dpm_steps, "total optimizer steps, counted across resumes");
    train_dpm->add_option("--seed", dpm_seed)->capture_default_str();
    train_dpm->add_option("--ema-decay", dpm_ema);
    train_dpm->add_flag("--binary-labels", dpm_binary, "condition on label > 0.5");
    train_dpm->add_option("--log-every", dpm_log_every)->capture_default_str();
    train_dpm->add_option("--checkpoint-every", dpm_ckpt_every)->capture_default_str();

    // train-clf
    Common clf_common;
    std::string clf_data;
    std::optional<std::string> clf_test;
    std::optional<int> clf_input_side, clf_batch, clf_patience, clf_eval_every, clf_max_steps, clf_base_width;
    std::optional<double> clf_lr, clf_train_fraction;
    std::optional<std::vector<std::uint64_t>> clf_seeds;
    std::optional<std::vector<int>> clf_blocks;
    double clf_threshold = 0.5;
    auto* train_clf = app.add_subcommand("train-clf", "train the classifier ensemble");
    clf_common.attach(train_clf);
    train_clf->add_option("--data", clf_data, "annotation table")->required();
    train_clf->add_option("--test", clf_test, "held-out annotation table");
    train_clf->add_option("--input-side", clf_input_side);
    train_clf->add_option("--lr", clf_lr);
    train_clf->add_option("--batch-size", clf_batch);
    train_clf->add_option("--seeds", clf_seeds, "one ensemble member per seed")->delimiter(',');
    train_clf->add_option("--train-fraction", clf_train_fraction);
    train_clf->add_option("--patience", clf_patience);
    train_clf->add_option("--eval-every", clf_eval_every);
    train_clf->add_option("--max-steps", clf_max_steps);
    train_clf->add_option("--base-width", clf_base_width);
    train_clf->add_option("--blocks", clf_blocks, "basic blocks per stage")->delimiter(',');
    train_clf->add_option("--threshold", clf_threshold)->capture_default_str();

    // evaluate
    EvaluateOptions eval;
    auto* evaluate = app.add_subcommand("evaluate", "score an annotation table with a classifier ensemble");
    evaluate->set_config("--config");
    evaluate->add_option("--classifier", eval.classifier)->required();
    evaluate->add_option("--data", eval.data)->required();
    evaluate->add_option("--threshold", eval.threshold)->capture_default_str();
    evaluate->add_option("--run-id", eval.run_id)->capture_default_str();

    // sweep
    Common sweep_common;
    SweepOptions sw;
    std::optional<int> sweep_n;
    auto* sweep_cmd = app.add_subcommand("sweep", "generate condition sweeps and score them");
    sweep_common.attach(sweep_cmd);
    sweep_cmd->add_option("--dpm", sw.dpm, "diffusion checkpoint")->required();
    sweep_cmd->add_option("--classifier", sw.classifier, "classifier checkpoint")->required();
    sweep_cmd->add_option("--n-seeds", sweep_n);
    sweep_cmd->add_option("--first-seed", sw.first_seed)->capture_default_str();
    sweep_cmd->add_option("--grid", sw.grid, "ascending conditions in [0, 1]")->delimiter(',');
    sweep_cmd->add_option("--start-max", sw.thresholds.start_max)->capture_default_str();
    sweep_cmd->add_option("--end-min", sw.thresholds.end_min)->capture_default_str();
    sweep_cmd->add_option("--step-max", sw.thresholds.step_max)->capture_default_str();
    sweep_cmd->add_option("--batch-seeds", sw.batch_seeds)->capture_default_str();
    sweep_cmd->add_option("--cell-size", sw.cell_size, "montage tile side")->capture_default_str();

    // transform
    Common tr_common;
    TransformOptions tr;
    auto* transform = app.add_subcommand("transform", "edit real patches toward a condition over stop times");
    tr_common.attach(transform);
    transform->add_option("--dpm", tr.dpm, "diffusion checkpoint")->required();
    transform->add_option("--classifier", tr.classifier, "classifier checkpoint")->required();
    transform->add_option("--inputs", tr.inputs, "annotation table with source patches")->required();
    transform->add_option("--count", tr.count)->capture_default_str();
    transform->add_option("--max-label", tr.max_label, "only inputs with label <= this")->capture_default_str();
    transform->add_option("--stops", tr.stop_times, "explicit stop times")->delimiter(',');
    transform->add_option("--n-stops", tr.n_stops, "evenly spaced stop times over [0, T]")->capture_default_str();
    transform->add_option("--condition", tr.condition)->capture_default_str();
    transform->add_option("--seed", tr.seed)->capture_default_str();
    transform->add_option("--tau", tr.tau, "resemblance threshold on classifier score")->capture_default_str();
    transform->add_option("--cell-size", tr.cell_size)->capture_default_str();

    // serve
    ServeOptions serve;
    std::string serve_data_dir;
    std::vector<std::string> serve_patches, serve_series;
    auto* serve_cmd = app.add_subcommand("serve", "run the annotation HTTP service");
    serve_cmd->set_config("--config");
    serve_cmd->add_option("--host", serve.host)->envname("MITODPM_HOST")->capture_default_str();
    serve_cmd->add_option("--port", serve.port, "0 picks a free port")->envname("MITODPM_PORT")->capture_default_str();
    serve_cmd->add_option("--data-dir", serve_data_dir, "persist logs here (empty: in memory)")
        ->envname("MITODPM_DATA_DIR");
    serve_cmd->add_option("--patches", serve_patches, "annotation tables with patch images");
    serve_cmd->add_option("--series", serve_series, "transform archive directories");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(args);
        std::reverse(args.begin(), args.end());  // the parser consumes from the back
        app.parse(std::move(args));
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitValidation;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (threads > 0) torch::set_num_threads(threads);

        if (*make_toy) {
            auto p = profile_by_name(toy_common.profile);
            MakeToyOptions o;
            o.location = toy_common.location();
            o.n = pick(toy_n, p.toy_count);
            o.seed = toy_seed;
            o.side = pick(toy_side, p.image_side);
            o.slides = toy_slides;
            report(cmd_make_toy(o));
        } else if (*train_dpm) {
            auto p = profile_by_name(dpm_common.profile);
            TrainDpmOptions o;
            o.location = dpm_common.location();
            o.data = dpm_data;
            if (dpm_resume) o.resume = *dpm_resume;
            o.timesteps = pick(dpm_timesteps, p.timesteps);
            o.beta_start = pick(dpm_beta_start, p.beta_start);
            o.beta_end = pick(dpm_beta_end, p.beta_end);
            o.denoiser = p.denoiser;
            o.denoiser.base_channels = pick(dpm_base, o.denoiser.base_channels);
            o.denoiser.depth = pick(dpm_depth, o.denoiser.depth);
            o.denoiser.cond_embed_width = pick(dpm_cond_width, o.denoiser.cond_embed_width);
            o.denoiser.time_embed_width = pick(dpm_time_width, o.denoiser.time_embed_width);
            o.train = p.dpm_train;
            o.train.learning_rate = pick(dpm_lr, o.train.learning_rate);
            o.train.batch_size = pick(dpm_batch, o.train.batch_size);
            o.train.steps = pick(dpm_steps, o.train.steps);
            o.train.ema_decay = pick(dpm_ema, o.train.ema_decay);
            o.train.seed = dpm_seed;
            o.binary_labels = dpm_binary;
            o.log_every = dpm_log_every;
            o.checkpoint_every = dpm_ckpt_every;
            report(cmd_train_dpm(o));
        } else if (*train_clf) {
            auto p = profile_by_name(clf_common.profile);
            TrainClfOptions o;
            o.location = clf_common.location();
            o.data = clf_data;
            if (clf_test) o.test = *clf_test;
            o.classifier = p.classifier;
            o.classifier.input_side = pick(clf_input_side, o.classifier.input_side);
            o.classifier.learning_rate = pick(clf_lr, o.classifier.learning_rate);
            o.classifier.batch_size = pick(clf_batch, o.classifier.batch_size);
            o.classifier.seeds = pick(clf_seeds, o.classifier.seeds);
            o.classifier.train_fraction = pick(clf_train_fraction, o.classifier.train_fraction);
            o.classifier.patience = pick(clf_patience, o.classifier.patience);
            o.classifier.eval_every = pick(clf_eval_every, o.classifier.eval_every);
            o.classifier.max_steps = pick(clf_max_steps, o.classifier.max_steps);
            o.classifier.backbone.base_width = pick(clf_base_width, o.classifier.backbone.base_width);
            o.classifier.backbone.blocks = pick(clf_blocks, o.classifier.backbone.blocks);
            o.threshold = clf_threshold;
            report(cmd_train_clf(o));
        } else if (*evaluate) {
            auto m = cmd_evaluate(eval);
            std::cout << classifier::metrics_csv_header() << '\n' << classifier::metrics_csv_row(eval.run_id, m) << std::endl;
        } else if (*sweep_cmd) {
            auto p = profile_by_name(sweep_common.profile);
            sw.location = sweep_common.location();
            sw.n_seeds = pick(sweep_n, p.sweep_seeds);
            report(cmd_sweep(sw));
        } else if (*transform) {
            profile_by_name(tr_common.profile);
            tr.location = tr_common.location();
            report(cmd_transform(tr));
        } else if (*serve_cmd) {
            serve.data_dir = serve_data_dir;
            for (const auto& p : serve_patches) serve.patches.emplace_back(p);
            for (const auto& s : serve_series) serve.series.emplace_back(s);
            return cmd_serve(serve);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitRuntime;
    }
    return 0;
}
