#include <torch/torch.h>

#include <set>

#include "doctest.h"
#include "mitodpm/classifier/classifier.hpp"
#include "mitodpm/classifier/sampling.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/random.hpp"
#include "temp_dir.hpp"

using namespace mitodpm;
using namespace mitodpm::classifier;

namespace {

ProbabilityModel constant(double p) {
    return [p](const torch::Tensor& images) { return torch::full({images.size(0)}, p, torch::kFloat32); };
}

// Probability grows with mean brightness; a deterministic stand-in for a network.
ProbabilityModel brightness() {
    return [](const torch::Tensor& images) { return (images.mean({1, 2, 3}) + 1) / 2; };
}

data::PatchRecord record(const std::string& id, int y, double label, const ImagePatch& image) {
    data::PatchRecord r;
    r.patch_id = id;
    r.slide_id = "s";
    r.center = {10, y};
    r.slide_height = 100;
    r.label = label;
    r.image = image;
    return r;
}

}  // namespace

TEST_CASE("balanced batches are exactly half positive") {
    auto stream = balanced_batches(7, 300, 16, 1);
    for (int i = 0; i < 1000; ++i) {
        auto b = stream.next();
        CHECK(b.positives.size() == 8);
        CHECK(b.negatives.size() == 8);
        for (auto p : b.positives) CHECK(p < 7);
        for (auto n : b.negatives) CHECK(n < 300);
    }
}

TEST_CASE("each pool is exhausted before any index repeats") {
    auto stream = balanced_batches(10, 10, 4, 3);
    std::multiset<std::size_t> seen;
    for (int i = 0; i < 5; ++i) {
        for (auto p : stream.next().positives) seen.insert(p);
    }
    // Five batches of two positives cover the pool of ten exactly once.
    for (std::size_t i = 0; i < 10; ++i) CHECK(seen.count(i) == 1);
}

TEST_CASE("balanced sampling rejects degenerate configurations") {
    CHECK_THROWS_AS(balanced_batches(0, 5, 4, 0), ValidationError);
    CHECK_THROWS_AS(balanced_batches(5, 0, 4, 0), ValidationError);
    CHECK_THROWS_AS(balanced_batches(5, 5, 3, 0), ValidationError);
    CHECK_THROWS_AS(balanced_batches(5, 5, 0, 0), ValidationError);
    auto a = balanced_batches(20, 20, 6, 9), b = balanced_batches(20, 20, 6, 9);
    for (int i = 0; i < 10; ++i) CHECK(a.next().positives == b.next().positives);
}

TEST_CASE("vertical split sends the top of each slide to training") {
    auto img = ImagePatch::zeros(8);
    std::vector<data::PatchRecord> recs{record("a", 0, 0, img), record("b", 74, 0, img), record("c", 75, 0, img),
                                        record("d", 99, 0, img)};
    auto [train, val] = split_by_vertical_axis(recs, 0.75);
    REQUIRE(train.size() == 2);
    REQUIRE(val.size() == 2);
    CHECK(train[1].patch_id == "b");
    CHECK(val[0].patch_id == "c");
    CHECK_THROWS_AS(split_by_vertical_axis(recs, 1.0), ValidationError);
    CHECK_THROWS_AS(split_by_vertical_axis(recs, 0.0), ValidationError);
    recs[0].slide_height.reset();
    CHECK_THROWS_AS(split_by_vertical_axis(recs, 0.5), ValidationError);
}

TEST_CASE("metrics on hand-computed cases") {
    std::vector<double> p{0.9, 0.8, 0.3, 0.6, 0.1, 0.5};
    std::vector<int> y{1, 1, 1, 0, 0, 0};
    auto m = compute_metrics(p, y, 0.5);
    // tp 2, fn 1, fp 2 (0.6 and 0.5 at the threshold), tn 1
    CHECK(m.true_positives == 2);
    CHECK(m.false_positives == 2);
    CHECK(m.false_negatives == 1);
    CHECK(m.true_negatives == 1);
    CHECK(m.accuracy == doctest::Approx(0.5));
    CHECK(m.f1 == doctest::Approx(4.0 / 7.0));

    std::vector<double> none_p{0.1, 0.2};
    std::vector<int> none_y{0, 0};
    CHECK(compute_metrics(none_p, none_y).f1 == 1.0);
    CHECK_THROWS_AS(compute_metrics({}, {}), ValidationError);
    CHECK_THROWS_AS(compute_metrics(p, none_y), ValidationError);
    CHECK(metrics_csv_header() == "run_id,accuracy,f1,threshold,n");
    CHECK(metrics_csv_row("r1", m) == "r1,0.500000,0.571429,0.5000,6");
}

TEST_CASE("ensemble prediction is the member mean") {
    ClassifierEnsemble e({8, 8}, {constant(0.2), constant(0.4), constant(0.9)});
    CHECK(e.predict(ImagePatch::zeros(8)) == doctest::Approx(0.5));
    CHECK(ensemble_predict(e, ImagePatch::zeros(8)) == doctest::Approx(0.5));
    CHECK(e.size() == 3);
    CHECK(e.member_probabilities(torch::zeros({4, 3, 8, 8})).sizes() == torch::IntArrayRef({3, 4}));

    auto images = torch::rand({5, 3, 8, 8}) * 2 - 1;
    ClassifierEnsemble single({8, 8}, {brightness()});
    ClassifierEnsemble triple({8, 8}, {brightness(), brightness(), brightness()});
    CHECK(torch::allclose(single.predict_batch(images), triple.predict_batch(images)));

    CHECK_THROWS_AS(e.predict(ImagePatch::zeros(16)), ValidationError);
    CHECK_THROWS_AS(ClassifierEnsemble({8, 8}, {}), ValidationError);
    CHECK_THROWS_AS(e.save("/tmp/never.pt"), StateError);
}

TEST_CASE("resnet picks its stem from the input side") {
    torch::manual_seed(0);
    ResNet small(ResNetConfig{8, {1, 1}}, 32);
    CHECK(small->forward(torch::zeros({2, 3, 32, 32})).sizes() == torch::IntArrayRef({2}));
    ResNet large(ResNetConfig{8, {1}}, 128);
    CHECK(large->forward(torch::zeros({1, 3, 128, 128})).sizes() == torch::IntArrayRef({1}));
    CHECK_THROWS_AS(ResNetConfig({8, {}}).validate(), ValidationError);
    CHECK_THROWS_AS(ResNetConfig({8, {1, 0}}).validate(), ValidationError);
    CHECK(ResNetConfig::resnet34().blocks == std::vector<int>{3, 4, 6, 3});
}

TEST_CASE("classifier training separates an easy problem and survives a save/load round trip") {
    TempDir dir;
    std::vector<data::PatchRecord> recs;
    auto g = make_generator(1);
    for (int i = 0; i < 80; ++i) {
        bool pos = i % 2 == 0;
        auto base = pos ? -0.6f : 0.6f;  // positives are dark
        auto img = ImagePatch::from_tensor((torch::full({3, 16, 16}, base) + 0.2 * torch::randn({3, 16, 16}, g)).clamp(-1, 1));
        recs.push_back(record("p" + std::to_string(i), i, pos ? 1.0 : 0.0, img));
    }
    for (auto& r : recs) r.center.y = static_cast<int>(r.center.y * 100 / 80);
    auto dataset = make_classifier_dataset(recs, 0.75);
    CHECK(dataset.train.size() == 60);
    CHECK(dataset.validation.size() == 20);

    ClassifierConfig cfg;
    cfg.input_side = 16;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 8;
    cfg.seeds = {0, 1};
    cfg.eval_every = 10;
    cfg.patience = 3;
    cfg.max_steps = 60;
    cfg.backbone = {8, {1}};
    TrainingLog log;
    auto ensemble = train_classifier(dataset, cfg, &log);
    CHECK(ensemble.size() == 2);
    CHECK_FALSE(log.empty());
    auto m = evaluate(ensemble, dataset.validation);
    CHECK(m.accuracy >= 0.9);

    ensemble.save(dir / "clf.pt");
    auto loaded = ClassifierEnsemble::load(dir / "clf.pt");
    CHECK(loaded.geometry() == ensemble.geometry());
    CHECK(torch::allclose(loaded.predict_batch(dataset.validation.images),
                          ensemble.predict_batch(dataset.validation.images), 1e-5, 1e-6));

    CHECK_THROWS_AS(ClassifierEnsemble::load(dir / "missing.pt"), ValidationError);
    ClassifierConfig bad = cfg;
    bad.batch_size = 3;
    CHECK_THROWS_AS(train_classifier(dataset, bad), ValidationError);
}
