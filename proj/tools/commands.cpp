#include "commands.hpp"

#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <thread>

#include "mitodpm/annotation/server.hpp"
#include "mitodpm/annotation/store.hpp"
#include "mitodpm/data/records.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"
#include "mitodpm/sweep/archive.hpp"

#ifndef MITODPM_VERSION
#define MITODPM_VERSION "unknown"
#endif

namespace mitodpm::cli {

using nlohmann::json;

std::string code_version() { return MITODPM_VERSION; }

namespace {

void require_file(const fs::path& path, const std::string& what) {
    if (path.empty()) throw ValidationError(what + " path is required");
    if (!fs::is_regular_file(path)) throw ValidationError(what + " not found: " + path.string());
}

void require_dir(const fs::path& path, const std::string& what) {
    if (!fs::is_directory(path)) throw ValidationError(what + " not found: " + path.string());
}

std::string utc_stamp() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

std::string config_hash(const json& config) { return short_hash(config.dump()); }

fs::path prepare_run_dir(const RunLocation& location, const json& config) {
    if (location.out) {
        const fs::path& dir = *location.out;
        if (fs::exists(dir)) {
            if (!fs::is_directory(dir)) throw ValidationError(dir.string() + " exists and is not a directory");
            if (!fs::is_empty(dir) && !location.force) {
                throw ValidationError(dir.string() + " exists and is not empty (use --force to overwrite)");
            }
        }
        fs::create_directories(dir);
        return dir;
    }
    std::string base = utc_stamp() + "-" + config_hash(config);
    fs::path dir = location.runs_root / base;
    for (int i = 1; fs::exists(dir); ++i) dir = location.runs_root / (base + "-" + std::to_string(i));
    fs::create_directories(dir);
    return dir;
}

json input_entry(const fs::path& path) { return {{"path", path.string()}, {"sha256", sha256_file(path.string())}}; }

json run_manifest(const std::string& command, const json& config, const json& inputs) {
    return {{"command", command},
            {"code_version", code_version()},
            {"config", config},
            {"config_hash", config_hash(config)},
            {"inputs", inputs}};
}

void write_json(const fs::path& path, const json& doc) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << doc.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

json denoiser_json(const diffusion::DenoiserConfig& c) {
    return {{"base_channels", c.base_channels},
            {"depth", c.depth},
            {"cond_embed_width", c.cond_embed_width},
            {"time_embed_width", c.time_embed_width}};
}

json classifier_json(const classifier::ClassifierConfig& c) {
    return {{"input_side", c.input_side},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"seeds", c.seeds},
            {"train_fraction", c.train_fraction},
            {"patience", c.patience},
            {"eval_every", c.eval_every},
            {"max_steps", c.max_steps},
            {"base_width", c.backbone.base_width},
            {"blocks", c.backbone.blocks}};
}

std::vector<data::PatchRecord> load_records_with_images(const fs::path& table) {
    auto records = data::ingest_annotations(table);
    if (records.empty()) throw ValidationError(table.string() + ": no records");
    for (const auto& r : records) {
        if (r.image.empty()) throw ValidationError(table.string() + ": patch " + r.patch_id + " has no image");
    }
    return records;
}

// Only the reported step is interesting on a terminal; the CSV keeps the rest.
void progress(const std::string& line) { std::cerr << line << std::endl; }

}  // namespace

fs::path cmd_make_toy(const MakeToyOptions& o) {
    if (o.n < 1) throw ValidationError("n must be positive");
    if (o.side < 8 || o.side % 2) throw ValidationError("side must be an even number >= 8");
    if (o.slides < 1) throw ValidationError("slides must be positive");
    json config = {{"n", o.n}, {"seed", o.seed}, {"side", o.side}, {"slides", o.slides}};
    fs::path dir = prepare_run_dir(o.location, config);

    auto records = data::toy_records(o.n, o.seed, o.side, o.slides);
    data::write_annotations(dir / "manifest.csv", records);
    write_json(dir / "manifest.json", run_manifest("make-toy", config, json::object()));
    return dir;
}

fs::path cmd_train_dpm(const TrainDpmOptions& o) {
    require_file(o.data, "dataset");
    if (o.resume) require_file(*o.resume, "resume checkpoint");
    o.train.validate();
    o.denoiser.validate();
    if (o.log_every < 1) throw ValidationError("log_every must be positive");
    if (o.checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
    auto schedule = diffusion::make_schedule(o.timesteps, o.beta_start, o.beta_end);

    json config = {{"data", o.data.string()},
                   {"timesteps", o.timesteps},
                   {"beta_start", o.beta_start},
                   {"beta_end", o.beta_end},
                   {"denoiser", denoiser_json(o.denoiser)},
                   {"learning_rate", o.train.learning_rate},
                   {"batch_size", o.train.batch_size},
                   {"steps", o.train.steps},
                   {"seed", o.train.seed},
                   {"ema_decay", o.train.ema_decay},
                   {"binary_labels", o.binary_labels}};
    json inputs = {{"data", input_entry(o.data)}};
    if (o.resume) {
        config["resume"] = o.resume->string();
        inputs["resume"] = input_entry(*o.resume);
    }

    auto records = load_records_with_images(o.data);
    std::vector<ImagePatch> patches;
    std::vector<float> labels;
    for (const auto& r : records) {
        patches.push_back(r.image);
        labels.push_back(o.binary_labels ? (r.label > 0.5 ? 1.0f : 0.0f) : static_cast<float>(r.label));
    }
    torch::Tensor images = stack_patches(patches);
    torch::Tensor conditions = torch::tensor(labels, torch::kFloat32);
    diffusion::check_conditions(conditions);
    int side = static_cast<int>(images.size(-1));

    auto trainer = o.resume ? diffusion::DiffusionTrainer::resume(*o.resume, o.train)
                            : diffusion::DiffusionTrainer(o.denoiser, schedule, o.train, side);
    if (trainer.model().image_side != side) {
        throw ValidationError("checkpoint image side " + std::to_string(trainer.model().image_side) +
                              " does not match the dataset (" + std::to_string(side) + ")");
    }

    fs::path dir = prepare_run_dir(o.location, config);
    write_json(dir / "manifest.json", run_manifest("train-dpm", config, inputs));
    fs::path log_path = dir / "train_log.csv";
    bool append = o.resume && fs::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!append) log << "step,loss\n";

    fs::path checkpoint = dir / "dpm.pt";
    double window = 0.0;
    int in_window = 0;
    trainer.fit(images, conditions, [&](std::int64_t step, double loss) {
        window += loss;
        ++in_window;
        if (step % o.log_every == 0 || step == o.train.steps) {
            log << step << ',' << sweep::format_decimal(window / in_window) << '\n' << std::flush;
            progress("step " + std::to_string(step) + " loss " + sweep::format_decimal(window / in_window));
            window = 0.0;
            in_window = 0;
        }
        if (o.checkpoint_every > 0 && step % o.checkpoint_every == 0) trainer.save(checkpoint);
    });
    trainer.save(checkpoint);
    return dir;
}

fs::path cmd_train_clf(const TrainClfOptions& o) {
    require_file(o.data, "dataset");
    if (o.test) require_file(*o.test, "test dataset");
    o.classifier.validate();

    json config = classifier_json(o.classifier);
    config["data"] = o.data.string();
    config["threshold"] = o.threshold;
    json inputs = {{"data", input_entry(o.data)}};
    if (o.test) {
        config["test"] = o.test->string();
        inputs["test"] = input_entry(*o.test);
    }

    auto records = load_records_with_images(o.data);
    auto dataset = classifier::make_classifier_dataset(records, o.classifier.train_fraction);
    std::optional<classifier::LabeledImages> test;
    if (o.test) {
        auto test_records = load_records_with_images(*o.test);
        test = classifier::make_labeled_images(test_records);
    }

    fs::path dir = prepare_run_dir(o.location, config);
    write_json(dir / "manifest.json", run_manifest("train-clf", config, inputs));

    classifier::TrainingLog log;
    auto ensemble = classifier::train_classifier(dataset, o.classifier, &log);
    ensemble.save(dir / "classifier.pt");

    std::ofstream log_csv(dir / "train_log.csv", std::ios::trunc);
    log_csv << "member,step,train_loss,validation_loss\n";
    for (const auto& p : log) {
        log_csv << p.member << ',' << p.step << ',' << sweep::format_decimal(p.train_loss) << ','
                << sweep::format_decimal(p.validation_loss) << '\n';
    }

    std::ofstream metrics(dir / "metrics.csv", std::ios::trunc);
    metrics << classifier::metrics_csv_header() << '\n';
    auto validation = classifier::evaluate(ensemble, dataset.validation, o.threshold);
    metrics << classifier::metrics_csv_row("validation", validation) << '\n';
    progress(classifier::metrics_csv_row("validation", validation));
    if (test) {
        auto m = classifier::evaluate(ensemble, *test, o.threshold);
        metrics << classifier::metrics_csv_row("test", m) << '\n';
        progress(classifier::metrics_csv_row("test", m));
    }
    return dir;
}

classifier::Metrics cmd_evaluate(const EvaluateOptions& o) {
    require_file(o.classifier, "classifier checkpoint");
    require_file(o.data, "dataset");
    auto ensemble = classifier::ClassifierEnsemble::load(o.classifier);
    auto records = load_records_with_images(o.data);
    return classifier::evaluate(ensemble, classifier::make_labeled_images(records), o.threshold);
}

fs::path cmd_sweep(const SweepOptions& o) {
    require_file(o.dpm, "diffusion checkpoint");
    require_file(o.classifier, "classifier checkpoint");
    if (o.n_seeds < 1) throw ValidationError("n_seeds must be positive");
    if (o.batch_seeds < 1) throw ValidationError("batch_seeds must be positive");
    if (o.cell_size < 1) throw ValidationError("cell_size must be positive");
    sweep::check_grid(o.grid);

    json config = {{"dpm", o.dpm.string()},
                   {"classifier", o.classifier.string()},
                   {"n_seeds", o.n_seeds},
                   {"first_seed", o.first_seed},
                   {"grid", o.grid},
                   {"start_max", o.thresholds.start_max},
                   {"end_min", o.thresholds.end_min},
                   {"step_max", o.thresholds.step_max},
                   {"cell_size", o.cell_size}};
    json inputs = {{"dpm", input_entry(o.dpm)}, {"classifier", input_entry(o.classifier)}};

    auto model = diffusion::DiffusionModel::load(o.dpm);
    auto ensemble = classifier::ClassifierEnsemble::load(o.classifier);
    if (ensemble.geometry().patch_side != model.image_side) {
        throw ValidationError("classifier scores " + std::to_string(ensemble.geometry().patch_side) +
                              " px patches but the diffusion model generates " + std::to_string(model.image_side) +
                              " px");
    }
    fs::path dir = prepare_run_dir(o.location, config);

    auto eps = model.epsilon();
    std::vector<sweep::SweepSeries> all;
    for (int begin = 0; begin < o.n_seeds; begin += o.batch_seeds) {
        int end = std::min(o.n_seeds, begin + o.batch_seeds);
        std::vector<std::uint64_t> seeds;
        for (int i = begin; i < end; ++i) seeds.push_back(o.first_seed + static_cast<std::uint64_t>(i));
        for (auto& s : sweep::generate_sweeps(eps, model.schedule, model.image_side, seeds, o.grid)) {
            s = sweep::score_series(std::move(s), ensemble);
            s.accepted = sweep::select(s, o.thresholds);
            all.push_back(std::move(s));
        }
        progress("sweeps " + std::to_string(end) + "/" + std::to_string(o.n_seeds));
    }
    auto curve = sweep::curve_stats(all);
    sweep::write_sweep_archive(dir, all, curve, run_manifest("sweep", config, inputs), o.cell_size);
    return dir;
}

fs::path cmd_transform(const TransformOptions& o) {
    require_file(o.dpm, "diffusion checkpoint");
    require_file(o.classifier, "classifier checkpoint");
    require_file(o.inputs, "input table");
    if (o.count < 1) throw ValidationError("count must be positive");
    if (o.condition < 0.0 || o.condition > 1.0) throw ValidationError("condition must lie in [0, 1]");
    if (!(o.tau > 0.0 && o.tau < 1.0)) throw ValidationError("tau must lie in (0, 1)");
    if (o.stop_times.empty() && o.n_stops < 2) throw ValidationError("n_stops must be at least 2");

    auto model = diffusion::DiffusionModel::load(o.dpm);
    auto ensemble = classifier::ClassifierEnsemble::load(o.classifier);
    std::vector<int> stops = o.stop_times.empty() ? diffusion::stop_time_grid(model.schedule.timesteps(), o.n_stops)
                                                  : o.stop_times;

    json config = {{"dpm", o.dpm.string()},
                   {"classifier", o.classifier.string()},
                   {"inputs", o.inputs.string()},
                   {"count", o.count},
                   {"max_label", o.max_label},
                   {"stop_times", stops},
                   {"condition", o.condition},
                   {"seed", o.seed},
                   {"tau", o.tau},
                   {"cell_size", o.cell_size}};
    json inputs = {{"dpm", input_entry(o.dpm)},
                   {"classifier", input_entry(o.classifier)},
                   {"inputs", input_entry(o.inputs)}};

    auto records = load_records_with_images(o.inputs);
    std::vector<ImagePatch> sources;
    std::vector<std::string> ids;
    std::vector<std::uint64_t> seeds;
    for (const auto& r : records) {
        if (r.label > o.max_label) continue;
        if (r.image.side() != model.image_side) {
            throw ValidationError("patch " + r.patch_id + " is " + std::to_string(r.image.side()) +
                                  " px; the diffusion model expects " + std::to_string(model.image_side));
        }
        sources.push_back(r.image);
        ids.push_back(r.patch_id);
        seeds.push_back(mix_seed(o.seed, sources.size() - 1));
        if (static_cast<int>(sources.size()) == o.count) break;
    }
    if (static_cast<int>(sources.size()) < o.count) {
        throw ValidationError("only " + std::to_string(sources.size()) + " inputs with label <= " +
                              sweep::format_decimal(o.max_label, 2) + " in " + o.inputs.string());
    }
    fs::path dir = prepare_run_dir(o.location, config);

    auto all = diffusion::edit_series_batch(sources, stops, o.condition, model.epsilon(), model.schedule, seeds);
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i].id = ids[i];
        sweep::score_transformation(all[i], ensemble);
    }
    sweep::write_transform_archive(dir, all, o.tau, run_manifest("transform", config, inputs), o.cell_size);
    return dir;
}

int cmd_serve(const ServeOptions& o) {
    if (o.port < 0 || o.port > 65535) throw ValidationError("port must lie in [0, 65535]");
    for (const auto& p : o.patches) require_file(p, "patch table");
    for (const auto& s : o.series) require_dir(s, "series archive");

    // Signals are taken synchronously by a dedicated thread, so the handler
    // never runs inside the server's worker threads.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    annotation::AnnotationStore store(o.data_dir);
    for (const auto& p : o.patches) store.load_patches(p);
    for (const auto& s : o.series) store.load_series(s);
    annotation::AnnotationServer server(store);
    int port = server.bind(o.host, o.port);
    std::cout << "listening on " << o.host << ':' << port << std::endl;

    std::atomic<bool> signalled{false};
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        signalled = true;
        server.stop();
    });
    server.run();
    if (!signalled) kill(getpid(), SIGTERM);
    waiter.join();
    store.snapshot();
    std::cerr << "stopped; state flushed" << std::endl;
    return 0;
}

}  // namespace mitodpm::cli
