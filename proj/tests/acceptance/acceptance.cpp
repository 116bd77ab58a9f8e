#include <torch/torch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "commands.hpp"
#include "mitodpm/annotation/store.hpp"
#include "mitodpm/classifier/sampling.hpp"
#include "mitodpm/csv.hpp"
#include "mitodpm/data/image_stats.hpp"
#include "mitodpm/data/toy.hpp"
#include "mitodpm/data/votes.hpp"
#include "mitodpm/hashing.hpp"
#include "mitodpm/png_io.hpp"
#include "mitodpm/profiles.hpp"
#include "mitodpm/random.hpp"
#include "mitodpm/stats.hpp"

using namespace mitodpm;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets, pinned here so a run cannot loosen them.
constexpr double kMarginalTolerance = 0.02;
constexpr int kMarginalDraws = 10000;
constexpr double kDecorrelationPairFraction = 0.95;
constexpr double kMinSpearman = 0.8;
constexpr double kMinScoreRise = 0.3;
constexpr int kMinSweeps = 100;
constexpr double kTwoThirdsTolerance = 1e-9;
constexpr double kIdenticalMemberTolerance = 1e-6;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double budget_seconds;
};

int failures = 0;

void report(const Criterion& c, Outcome outcome, double seconds) {
    if (seconds > c.budget_seconds) {
        outcome.pass = false;
        outcome.detail += "; over budget of " + std::to_string(static_cast<int>(c.budget_seconds)) + " s";
    }
    failures += !outcome.pass;
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << c.name << " [" << std::fixed << std::setprecision(2) << seconds
              << " s] " << outcome.detail << std::endl;
}

template <typename Fn>
void run(const Criterion& c, Fn fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
        outcome = fn();
    } catch (const std::exception& e) {
        outcome = {false, std::string("threw: ") + e.what()};
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    report(c, outcome, elapsed.count());
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
}

Outcome schedule_correctness() {
    const int T = 200;
    const double b0 = 1e-4, b1 = 0.02;
    auto sched = diffusion::make_schedule(T, b0, b1);
    bool exact = static_cast<int>(sched.alpha_bars().size()) == T;
    bool decreasing = true;
    double max_beta_err = 0;
    long double product = 1.0L;
    double loop = 1.0;
    double max_long_err = 0;
    for (int t = 1; t <= T && exact; ++t) {
        // Independent linspace in extended precision.
        const long double beta = b0 + (static_cast<long double>(b1) - b0) * (t - 1) / (T - 1);
        max_beta_err = std::max(max_beta_err, static_cast<double>(std::fabs(beta - sched.beta(t))));
        loop *= 1.0 - sched.betas()[static_cast<std::size_t>(t - 1)];
        product *= 1.0L - beta;
        exact = exact && loop == sched.alpha_bar(t);
        max_long_err = std::max(max_long_err, static_cast<double>(std::fabs(product - sched.alpha_bar(t))));
        if (t > 1) decreasing = decreasing && sched.alpha_bar(t) < sched.alpha_bar(t - 1);
    }
    const bool pass = exact && decreasing && max_beta_err < 1e-15 && max_long_err < 1e-13;
    return {pass, "cumprod loop exact=" + std::to_string(exact) + " strictly decreasing=" + std::to_string(decreasing) +
                      " max |beta - linspace|=" + fmt(max_beta_err, 3) + " max |abar - long double|=" +
                      fmt(max_long_err, 3)};
}

// Per-pixel moments over many draws, pooled over pixels: the slope of the
// mean against x0 (which should be sqrt(abar_t)) and the root mean variance
// (which should be sqrt(1 - abar_t)).
struct Moments {
    double slope;
    double stddev;
};

Moments pooled_moments(const torch::Tensor& sum, const torch::Tensor& sumsq, const torch::Tensor& x0, int n) {
    auto mean = sum / n;
    auto var = sumsq / n - mean * mean;
    const double slope = ((mean * x0).sum() / (x0 * x0).sum()).item<double>();
    return {slope, std::sqrt(var.mean().item<double>())};
}

Outcome forward_marginal() {
    const int T = 200;
    auto sched = diffusion::make_schedule(T, 1e-4, 0.02);
    auto x0 = data::toy_dataset(1, 3, 8).front().image.tensor();
    auto x0d = x0.to(torch::kFloat64);
    const std::vector<int> checkpoints{1, T / 2, T};
    const int chunk = 1000;

    auto zeros = [&] { return torch::zeros_like(x0d); };
    std::vector<torch::Tensor> it_sum(3), it_sq(3), cf_sum(3), cf_sq(3);
    for (int k = 0; k < 3; ++k) it_sum[k] = zeros(), it_sq[k] = zeros(), cf_sum[k] = zeros(), cf_sq[k] = zeros();

    auto g = make_generator(11);
    for (int done = 0; done < kMarginalDraws; done += chunk) {
        auto x = x0.unsqueeze(0).expand({chunk, 3, 8, 8}).clone();
        for (int t = 1; t <= T; ++t) {
            x = diffusion::q_step(x, t, torch::randn(x.sizes(), g), sched);
            auto k = std::find(checkpoints.begin(), checkpoints.end(), t) - checkpoints.begin();
            if (k < 3) {
                auto xd = x.to(torch::kFloat64);
                it_sum[k] += xd.sum(0);
                it_sq[k] += (xd * xd).sum(0);
            }
        }
        for (int k = 0; k < 3; ++k) {
            auto batch = x0.unsqueeze(0).expand({chunk, 3, 8, 8});
            auto y = diffusion::q_sample(batch, checkpoints[k], torch::randn(batch.sizes(), g), sched).to(torch::kFloat64);
            cf_sum[k] += y.sum(0);
            cf_sq[k] += (y * y).sum(0);
        }
    }

    bool pass = true;
    std::string detail;
    for (int k = 0; k < 3; ++k) {
        auto it = pooled_moments(it_sum[k], it_sq[k], x0d, kMarginalDraws);
        auto cf = pooled_moments(cf_sum[k], cf_sq[k], x0d, kMarginalDraws);
        const double mean_err = std::fabs(it.slope - cf.slope) / std::fabs(cf.slope);
        const double std_err = std::fabs(it.stddev - cf.stddev) / cf.stddev;
        pass = pass && mean_err <= kMarginalTolerance && std_err <= kMarginalTolerance;
        detail += "t=" + std::to_string(checkpoints[k]) + " mean rel err " + fmt(mean_err, 3) + " std rel err " +
                  fmt(std_err, 3) + (k < 2 ? "; " : "");
    }
    return {pass, detail};
}

Outcome edit_identity() {
    auto profile = desk_profile();
    torch::manual_seed(0);
    diffusion::UNet net(profile.denoiser);
    auto model = diffusion::as_epsilon_model(net);
    auto sched = diffusion::make_schedule(profile.timesteps, profile.beta_start, profile.beta_end);
    auto g = make_generator(5);
    int identical = 0;
    for (int i = 0; i < 20; ++i) {
        auto x = ImagePatch::from_tensor(torch::rand({3, 32, 32}, g) * 2 - 1);
        auto out = diffusion::partial_edit(x, 0, 1.0, model, sched, g);
        identical += torch::equal(out.tensor(), x.tensor());
    }
    return {identical == 20, std::to_string(identical) + "/20 bit-identical"};
}

Outcome selection_filter() {
    struct Case {
        std::vector<double> scores;
        bool expected;
    };
    const std::vector<Case> cases{
        {{0.05, 0.3, 0.55, 0.8, 0.95}, true},   // all clauses hold
        {{0.1, 0.3, 0.55, 0.8, 0.95}, false},   // start at the boundary
        {{0.0999, 0.3, 0.55, 0.8, 0.95}, true},
        {{0.05, 0.3, 0.55, 0.8, 0.9}, false},   // end at the boundary
        {{0.05, 0.3, 0.55, 0.8, 0.9001}, true},
        {{0.0, 0.3, 0.55, 0.8, 0.95}, false},    // a step of exactly 0.30
        {{0.05, 0.3499, 0.6, 0.8, 0.95}, true},
        {{0.2, 0.3, 0.55, 0.8, 0.95}, false},   // start too high
        {{0.05, 0.3, 0.55, 0.8, 0.85}, false},  // end too low
        {{0.05, 0.95}, false},                  // one big jump
        {{0.05, 0.3, 0.2, 0.45, 0.7, 0.95}, true},
        {{0.05, 0.5, 0.15, 0.4, 0.65, 0.95}, false},  // a drop of 0.35 is also abrupt
    };
    int correct = 0;
    for (const auto& c : cases) correct += sweep::select(c.scores) == c.expected;
    return {correct == static_cast<int>(cases.size()),
            std::to_string(correct) + "/" + std::to_string(cases.size()) + " truth-table rows"};
}

Outcome balanced_sampling() {
    auto stream = classifier::balanced_batches(123, 877, 64, 42);
    int exact = 0;
    for (int i = 0; i < 1000; ++i) {
        auto b = stream.next();
        exact += b.positives.size() == 32 && b.negatives.size() == 32;
    }
    return {exact == 1000, std::to_string(exact) + "/1000 batches exactly half positive"};
}

Outcome ensemble_mean() {
    auto constant = [](double p) {
        return [p](const torch::Tensor& x) { return torch::full({x.size(0)}, p, torch::kFloat32); };
    };
    classifier::ClassifierEnsemble hand({8, 8}, {constant(0.2), constant(0.4), constant(0.9)});
    const double p = hand.predict(ImagePatch::zeros(8));

    torch::manual_seed(3);
    classifier::ResNet net(classifier::ResNetConfig{8, {1}}, 8);
    net->eval();
    classifier::ProbabilityModel member = [net](const torch::Tensor& x) mutable {
        torch::NoGradGuard guard;
        return torch::sigmoid(net->forward(x));
    };
    classifier::ClassifierEnsemble single({8, 8}, {member});
    classifier::ClassifierEnsemble triple({8, 8}, {member, member, member});
    auto images = torch::rand({16, 3, 8, 8}) * 2 - 1;
    const double diff = (single.predict_batch(images) - triple.predict_batch(images)).abs().max().item<double>();
    const bool pass = std::fabs(p - 0.5) < 1e-7 && diff <= kIdenticalMemberTolerance;
    return {pass, "(0.2, 0.4, 0.9) -> " + fmt(p, 7) + "; identical members max diff " + fmt(diff, 3)};
}

Outcome vote_aggregation() {
    using data::VoteValue;
    auto agg = [](std::vector<double> v) {
        std::vector<VoteValue> values;
        for (double x : v) values.push_back(VoteValue::parse(x));
        return data::aggregate_votes(values);
    };
    const double a = agg({0, 0.5, 1});
    const double b = agg({0, 1, 1});
    std::mt19937_64 rng(7);
    int invariant = 0;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> v(1 + rng() % 12);
        for (auto& x : v) x = VoteValue::kLevels[rng() % 3];
        const double brute = std::accumulate(v.begin(), v.end(), 0.0L) / static_cast<long double>(v.size());
        bool ok = true;
        for (int p = 0; p < 5; ++p) {
            std::shuffle(v.begin(), v.end(), rng);
            ok = ok && std::fabs(agg(v) - brute) < 1e-12;
        }
        invariant += ok;
    }
    const bool pass = a == 0.5 && std::fabs(b - 2.0 / 3.0) <= kTwoThirdsTolerance && invariant == 100;
    return {pass, "[0,0.5,1] -> " + fmt(a, 10) + "; [0,1,1] -> " + fmt(b, 10) + "; " + std::to_string(invariant) +
                      "/100 vectors permutation invariant"};
}

Outcome service_linearizability(const fs::path& work) {
    const auto dir = work / "store";
    fs::remove_all(dir);
    const int writers = 8, patches = 50, repeats = 2;  // 100 votes per writer
    std::vector<std::string> ids, sessions;
    {
        annotation::AnnotationStore store(dir);
        auto png = encode_png(ImagePatch::zeros(8).to_rgb8());
        for (int i = 0; i < patches; ++i) {
            ids.push_back("p" + std::to_string(i));
            store.add_patch(ids.back(), png);
        }
        for (int w = 0; w < writers; ++w) {
            sessions.push_back(store.create_session("w" + std::to_string(w), ids, repeats, w).session_id);
        }
        std::vector<std::thread> threads;
        for (int w = 0; w < writers; ++w) {
            threads.emplace_back([&, w] {
                int k = 0;
                while (auto item = store.next_item(sessions[w])) {
                    const double value = data::VoteValue::kLevels[static_cast<std::size_t>((w * 7 + k++) % 3)];
                    store.submit_vote(sessions[w], item->patch_id, value, item->position);
                    if (k % 5 == 0) store.submit_vote(sessions[w], item->patch_id, value, item->position);
                }
            });
        }
        for (auto& t : threads) t.join();

        auto log = store.vote_log();
        std::set<std::pair<std::string, std::size_t>> keys;
        for (const auto& e : log) keys.insert({e.session_id, e.position});
        int consistent = 0;
        for (const auto& id : ids) {
            auto running = store.get_label(id);
            auto full = store.recompute_label(id);
            consistent += running.votes == writers * repeats && full.votes == running.votes &&
                          running.histogram == full.histogram && std::fabs(running.label - full.label) < 1e-12;
        }
        store.snapshot();
        const std::size_t expected = static_cast<std::size_t>(writers * patches * repeats);
        if (log.size() != expected || keys.size() != expected || consistent != patches) {
            return {false, std::to_string(log.size()) + " logged, " + std::to_string(keys.size()) + " distinct, " +
                               std::to_string(consistent) + "/50 patches consistent"};
        }
    }
    annotation::AnnotationStore reopened(dir);
    int replayed = 0;
    for (const auto& id : ids) replayed += reopened.get_label(id).votes == writers * repeats;
    return {replayed == patches, "800 votes, no loss or duplication; running aggregates equal log recomputation; " +
                                     std::to_string(replayed) + "/50 patches intact after replay"};
}

struct Trained {
    fs::path toy, dpm, classifier;
};

Trained train_models(const fs::path& work, bool reuse) {
    using namespace cli;
    const auto profile = desk_profile();
    Trained t{work / "toy" / "manifest.csv", work / "dpm" / "dpm.pt", work / "clf" / "classifier.pt"};
    auto at = [](const fs::path& p) {
        RunLocation loc;
        loc.out = p;
        loc.force = true;
        return loc;
    };
    if (!(reuse && fs::exists(t.toy))) {
        MakeToyOptions o;
        o.location = at(work / "toy");
        o.n = profile.toy_count;
        o.side = profile.image_side;
        cmd_make_toy(o);
    }
    if (!(reuse && fs::exists(t.classifier))) {
        TrainClfOptions o;
        o.location = at(work / "clf");
        o.data = t.toy;
        o.classifier = profile.classifier;
        cmd_train_clf(o);
        std::cout << "  classifier: " << csv::Table::read_file((work / "clf" / "metrics.csv").string()).cell(0, "accuracy")
                  << " validation accuracy" << std::endl;
    }
    if (!(reuse && fs::exists(t.dpm))) {
        TrainDpmOptions o;
        o.location = at(work / "dpm");
        o.data = t.toy;
        o.timesteps = profile.timesteps;
        o.beta_start = profile.beta_start;
        o.beta_end = profile.beta_end;
        o.denoiser = profile.denoiser;
        o.train = profile.dpm_train;
        o.log_every = 250;
        cmd_train_dpm(o);
    }
    return t;
}

Outcome condition_monotonicity(const Trained& models, const fs::path& work) {
    cli::SweepOptions o;
    o.location.out = work / "sweep";
    o.location.force = true;
    o.dpm = models.dpm;
    o.classifier = models.classifier;
    o.n_seeds = std::max(kMinSweeps, desk_profile().sweep_seeds);
    o.cell_size = 32;
    auto dir = cli::cmd_sweep(o);

    // Recompute the curve from the raw per-image scores.
    auto scores = csv::Table::read_file((dir / "scores.csv").string());
    std::map<double, std::vector<double>> by_condition;
    std::set<std::string> seeds;
    for (std::size_t r = 0; r < scores.rows(); ++r) {
        by_condition[std::stod(scores.cell(r, "condition"))].push_back(std::stod(scores.cell(r, "score")));
        seeds.insert(scores.cell(r, "seed"));
    }
    std::vector<double> conditions, means;
    for (const auto& [c, v] : by_condition) {
        conditions.push_back(c);
        means.push_back(stats::mean(v));
    }
    const double rho = stats::spearman(conditions, means);
    const double rise = means.back() - means.front();
    std::string curve;
    for (double m : means) curve += fmt(m, 3) + " ";
    const bool pass = static_cast<int>(seeds.size()) >= kMinSweeps && conditions.front() == 0.0 &&
                      conditions.back() == 1.0 && rho >= kMinSpearman && rise >= kMinScoreRise;
    return {pass, std::to_string(seeds.size()) + " sweeps; spearman " + fmt(rho) + " (min " + fmt(kMinSpearman) +
                      "); mean(1.0) - mean(0.0) = " + fmt(rise) + " (min " + fmt(kMinScoreRise) + "); curve " + curve};
}

Outcome edit_decorrelation(const Trained& models) {
    auto model = diffusion::DiffusionModel::load(models.dpm);
    const int T = model.schedule.timesteps();
    auto cells = data::toy_dataset(50, 99, model.image_side);
    std::vector<ImagePatch> inputs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        inputs.push_back(cells[i].image);
        seeds.push_back(mix_seed(99, i));
    }
    const std::vector<int> stops{T / 10, T};
    // The edit keeps each cell's own morphology as its condition.
    std::vector<double> near, far;
    int lower = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        auto one = diffusion::edit_series(inputs[i], stops, cells[i].morphology, model.epsilon(), model.schedule, seeds[i]);
        near.push_back(data::ssim(one.outputs[0], inputs[i]));
        far.push_back(data::ssim(one.outputs[1], inputs[i]));
        lower += far.back() < near.back();
    }
    const double fraction = lower / 50.0;
    const bool pass = stats::mean(far) < stats::mean(near) && fraction >= kDecorrelationPairFraction;
    return {pass, "mean SSIM at t=" + std::to_string(T / 10) + " " + fmt(stats::mean(near)) + ", at t=" +
                      std::to_string(T) + " " + fmt(stats::mean(far)) + "; lower in " + std::to_string(lower) +
                      "/50 pairs (min " + fmt(kDecorrelationPairFraction) + ")"};
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
    std::vector<fs::path> left, right;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) left.push_back(fs::relative(e.path(), a));
    }
    for (const auto& e : fs::recursive_directory_iterator(b)) {
        if (e.is_regular_file()) right.push_back(fs::relative(e.path(), b));
    }
    std::sort(left.begin(), left.end());
    std::sort(right.begin(), right.end());
    if (left != right) return false;
    files = left.size();
    for (const auto& rel : left) {
        if (read_bytes((a / rel).string()) != read_bytes((b / rel).string())) return false;
    }
    return true;
}

Outcome reproducibility(const Trained& models, const fs::path& work) {
    cli::SweepOptions o;
    o.dpm = models.dpm;
    o.classifier = models.classifier;
    o.n_seeds = 4;
    o.first_seed = 2024;
    o.cell_size = 32;
    o.location.force = true;
    o.location.out = work / "repro-a";
    cli::cmd_sweep(o);
    o.location.out = work / "repro-b";
    cli::cmd_sweep(o);
    std::size_t files = 0;
    const bool same = same_tree(work / "repro-a", work / "repro-b", files);
    std::size_t csvs = 0, pngs = 0;
    for (const auto& e : fs::recursive_directory_iterator(work / "repro-a")) {
        csvs += e.path().extension() == ".csv";
        pngs += e.path().extension() == ".png";
    }
    return {same && csvs > 0 && pngs > 0,
            std::string(same ? "identical" : "different") + " archives (" + std::to_string(csvs) + " CSVs, " +
                std::to_string(pngs) + " PNGs, " + std::to_string(files) + " files)"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance suite: one PASS/FAIL line per criterion"};
    fs::path work = "acceptance_work";
    bool reuse = false;
    bool skip_trained = false;
    app.add_option("--work-dir", work, "scratch directory for trained models and archives")->capture_default_str();
    app.add_flag("--reuse", reuse, "reuse models already trained in the work directory");
    app.add_flag("--skip-trained", skip_trained, "only run criteria that need no trained models");
    CLI11_PARSE(app, argc, argv);

    torch::set_num_threads(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    fs::create_directories(work);

    run({"schedule_correctness", 1}, schedule_correctness);
    run({"forward_marginal_equivalence", 60}, forward_marginal);
    run({"edit_identity", 1}, edit_identity);
    run({"selection_filter", 1}, selection_filter);
    run({"balanced_sampling", 5}, balanced_sampling);
    run({"ensemble_mean", 1}, ensemble_mean);
    run({"vote_aggregation", 1}, vote_aggregation);
    run({"service_linearizability", 60}, [&] { return service_linearizability(work); });

    if (!skip_trained) {
        // Training counts against the monotonicity budget of two CPU hours.
        const auto start = std::chrono::steady_clock::now();
        Trained models;
        Outcome trained{true, ""};
        try {
            models = train_models(work, reuse);
        } catch (const std::exception& e) {
            trained = {false, std::string("training threw: ") + e.what()};
        }
        const std::chrono::duration<double> train_time = std::chrono::steady_clock::now() - start;
        std::cout << "  trained desk models in " << std::fixed << std::setprecision(0) << train_time.count() << " s"
                  << std::endl;
        if (trained.pass) {
            run({"edit_decorrelation", 600}, [&] { return edit_decorrelation(models); });
            const auto sweep_start = std::chrono::steady_clock::now();
            Outcome mono;
            try {
                mono = condition_monotonicity(models, work);
            } catch (const std::exception& e) {
                mono = {false, std::string("threw: ") + e.what()};
            }
            const std::chrono::duration<double> sweep_time = std::chrono::steady_clock::now() - sweep_start;
            report({"condition_monotonicity", 7200}, mono, train_time.count() + sweep_time.count());
            run({"sweep_reproducibility", 300}, [&] { return reproducibility(models, work); });
        } else {
            for (const char* name : {"edit_decorrelation", "condition_monotonicity", "sweep_reproducibility"}) {
                report({name, 0}, trained, 0);
            }
        }
    }

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
