#pragma once

#include <span>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "mitodpm/classifier/metrics.hpp"
#include "mitodpm/data/image.hpp"
#include "mitodpm/data/records.hpp"

namespace mitodpm::classifier {

struct ResNetConfig {
    int base_width = 16;
    std::vector<int> blocks{1, 1};  // basic blocks per stage; width doubles per stage

    static ResNetConfig resnet34() { return {64, {3, 4, 6, 3}}; }
    void validate() const;
};

struct ClassifierConfig {
    int input_side = 256;  // patches are resized (bilinear) to this side
    double learning_rate = 1e-5;
    int batch_size = 128;  // even: half positives, half negatives
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double train_fraction = 0.75;  // vertical split
    int patience = 5;              // evaluations without validation improvement
    int eval_every = 50;           // optimizer steps between validation passes
    int max_steps = 5000;
    ResNetConfig backbone = ResNetConfig::resnet34();

    void validate() const;
};

struct BasicBlockImpl : torch::nn::Module {
    BasicBlockImpl(int in_channels, int out_channels, int stride);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

// Residual classifier emitting one logit per image. Inputs of side >= 128 use
// the 7x7/2 stem with max pooling; smaller inputs a 3x3/1 stem.
class ResNetImpl : public torch::nn::Module {
public:
    ResNetImpl(const ResNetConfig& config, int input_side);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Sequential stem{nullptr};
    torch::nn::Sequential stages{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ResNet);

// Images [B, 3, S, S] in [-1, 1] -> probabilities [B].
using ProbabilityModel = std::function<torch::Tensor(const torch::Tensor& images)>;

struct Geometry {
    int patch_side = 0;  // side of the patches the ensemble scores
    int input_side = 0;  // side the members see after resizing
    friend bool operator==(const Geometry&, const Geometry&) = default;
};

// Averages member probabilities.
class ClassifierEnsemble {
public:
    ClassifierEnsemble(Geometry geometry, std::vector<ProbabilityModel> members);
    static ClassifierEnsemble from_networks(Geometry geometry, const ResNetConfig& config, std::vector<ResNet> nets);
    static ClassifierEnsemble load(const std::filesystem::path& checkpoint);

    // Only ensembles built from networks can be saved.
    void save(const std::filesystem::path& checkpoint) const;

    // Throws ValidationError when the patch side differs from geometry().patch_side.
    double predict(const ImagePatch& patch) const;
    torch::Tensor predict_batch(const torch::Tensor& images) const;
    // Per-member probabilities [members, B].
    torch::Tensor member_probabilities(const torch::Tensor& images) const;

    const Geometry& geometry() const { return geometry_; }
    std::size_t size() const { return members_.size(); }

private:
    Geometry geometry_;
    std::vector<ProbabilityModel> members_;
    ResNetConfig config_;
    std::vector<ResNet> nets_;
};

double ensemble_predict(const ClassifierEnsemble& ensemble, const ImagePatch& patch);

struct LabeledImages {
    torch::Tensor images;  // [N, 3, S, S]
    torch::Tensor labels;  // [N] int64 in {0, 1}
    std::size_t size() const { return images.defined() ? static_cast<std::size_t>(images.size(0)) : 0; }
};

struct ClassifierDataset {
    LabeledImages train;
    LabeledImages validation;
};

// Binarises labels (positive iff label > 0.5) and splits along the vertical
// axis. Every record needs an image.
ClassifierDataset make_classifier_dataset(std::span<const data::PatchRecord> records, double train_fraction);
LabeledImages make_labeled_images(std::span<const data::PatchRecord> records);

struct EvaluationPoint {
    std::size_t member;
    int step;
    double train_loss;       // mean over the steps since the previous evaluation
    double validation_loss;  // binary cross-entropy over the whole validation split
};
using TrainingLog = std::vector<EvaluationPoint>;

// One member per seed, each trained on class-balanced batches with binary
// cross-entropy and early-stopped on validation loss (best weights kept).
// Throws NonFiniteLossError on divergence.
ClassifierEnsemble train_classifier(const ClassifierDataset& dataset, const ClassifierConfig& config,
                                    TrainingLog* log = nullptr);

Metrics evaluate(const ClassifierEnsemble& ensemble, const LabeledImages& test, double threshold = 0.5);

inline constexpr const char* kClassifierCheckpointFormat = "mitodpm.classifier.v1";

}  // namespace mitodpm::classifier
