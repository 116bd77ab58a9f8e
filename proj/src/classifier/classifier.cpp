#include "mitodpm/classifier/classifier.hpp"

#include <cmath>
#include <limits>

#include "mitodpm/checkpoint.hpp"
#include "mitodpm/classifier/sampling.hpp"
#include "mitodpm/errors.hpp"
#include "mitodpm/hashing.hpp"

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace mitodpm::classifier {

namespace {

constexpr int64_t kInferenceChunk = 64;

nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(false));
}

std::vector<torch::Tensor> snapshot(const ResNet& net) {
    std::vector<torch::Tensor> state;
    for (const auto& p : net->parameters()) state.push_back(p.detach().clone());
    for (const auto& b : net->buffers()) state.push_back(b.detach().clone());
    return state;
}

void restore(ResNet& net, const std::vector<torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    std::size_t i = 0;
    for (auto& p : net->parameters()) p.copy_(state[i++]);
    for (auto& b : net->buffers()) b.copy_(state[i++]);
}

torch::Tensor prepare(const torch::Tensor& images, int input_side) { return resize_bilinear(images, input_side); }

double validation_loss(ResNet& net, const LabeledImages& val, int input_side) {
    torch::NoGradGuard no_grad;
    net->eval();
    double total = 0.0;
    for (int64_t start = 0; start < val.images.size(0); start += kInferenceChunk) {
        const auto end = std::min(start + kInferenceChunk, val.images.size(0));
        const auto logits = net->forward(prepare(val.images.slice(0, start, end), input_side)).view({-1});
        const auto target = val.labels.slice(0, start, end).to(torch::kFloat32);
        total += F::binary_cross_entropy_with_logits(
                     logits, target, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kSum))
                     .item<double>();
    }
    return total / static_cast<double>(val.images.size(0));
}

ResNet train_member(const ClassifierDataset& data, const ClassifierConfig& config, std::size_t member,
                    TrainingLog* log) {
    const auto seed = config.seeds[member];
    torch::manual_seed(seed);
    ResNet net(config.backbone, config.input_side);
    torch::optim::Adam optimizer(net->parameters(), torch::optim::AdamOptions(config.learning_rate));

    const auto labels = data.train.labels;
    const auto pos_index = torch::nonzero(labels == 1).view({-1});
    const auto neg_index = torch::nonzero(labels == 0).view({-1});
    BalancedBatchStream stream(static_cast<std::size_t>(pos_index.size(0)), static_cast<std::size_t>(neg_index.size(0)),
                               config.batch_size, mix_seed(seed, 7));
    const auto half = config.batch_size / 2;
    const auto target = torch::cat({torch::ones({half}), torch::zeros({half})});

    double best = std::numeric_limits<double>::infinity();
    auto best_state = snapshot(net);
    int stale = 0;
    double running = 0.0;
    int running_steps = 0;
    for (int step = 1; step <= config.max_steps; ++step) {
        const auto batch = stream.next();
        std::vector<int64_t> rows;
        rows.reserve(static_cast<std::size_t>(config.batch_size));
        for (auto i : batch.positives) rows.push_back(pos_index[static_cast<int64_t>(i)].item<int64_t>());
        for (auto i : batch.negatives) rows.push_back(neg_index[static_cast<int64_t>(i)].item<int64_t>());
        const auto images = data.train.images.index_select(0, torch::tensor(rows, torch::kLong));

        net->train();
        optimizer.zero_grad();
        const auto logits = net->forward(prepare(images, config.input_side)).view({-1});
        auto loss = F::binary_cross_entropy_with_logits(logits, target);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            throw NonFiniteLossError("classifier member " + std::to_string(member) + " (seed " + std::to_string(seed) +
                                     ") loss became " + std::to_string(value) + " at step " + std::to_string(step));
        }
        loss.backward();
        optimizer.step();
        running += value;
        ++running_steps;

        if (step % config.eval_every == 0 || step == config.max_steps) {
            const double val = validation_loss(net, data.validation, config.input_side);
            if (log) log->push_back({member, step, running / running_steps, val});
            running = 0.0;
            running_steps = 0;
            if (val < best) {
                best = val;
                best_state = snapshot(net);
                stale = 0;
            } else if (++stale >= config.patience) {
                break;
            }
        }
    }
    restore(net, best_state);
    net->eval();
    return net;
}

}  // namespace

void ResNetConfig::validate() const {
    if (base_width < 1 || blocks.empty()) throw ValidationError("backbone needs a positive width and at least one stage");
    for (int b : blocks) {
        if (b < 1) throw ValidationError("every backbone stage needs at least one block");
    }
}

void ClassifierConfig::validate() const {
    if (input_side < 8) throw ValidationError("classifier input side must be at least 8");
    if (!(learning_rate > 0.0)) throw ValidationError("classifier learning rate must be positive");
    if (batch_size < 2 || batch_size % 2) throw ValidationError("classifier batch size must be positive and even");
    if (seeds.empty()) throw ValidationError("classifier ensemble needs at least one seed");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train fraction must lie in (0, 1)");
    if (patience < 1 || eval_every < 1 || max_steps < 1) throw ValidationError("patience, eval interval and step budget must be positive");
    backbone.validate();
}

BasicBlockImpl::BasicBlockImpl(int in_channels, int out_channels, int stride)
    : conv1(register_module("conv1", conv(in_channels, out_channels, 3, stride, 1))),
      conv2(register_module("conv2", conv(out_channels, out_channels, 3, 1, 1))),
      bn1(register_module("bn1", nn::BatchNorm2d(out_channels))),
      bn2(register_module("bn2", nn::BatchNorm2d(out_channels))) {
    if (stride != 1 || in_channels != out_channels) {
        downsample = register_module(
            "downsample", nn::Sequential(conv(in_channels, out_channels, 1, stride, 0), nn::BatchNorm2d(out_channels)));
    }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
    auto h = torch::relu(bn1(conv1(x)));
    h = bn2(conv2(h));
    return torch::relu(h + (downsample ? downsample->forward(x) : x));
}

ResNetImpl::ResNetImpl(const ResNetConfig& config, int input_side) {
    config.validate();
    const int w = config.base_width;
    if (input_side >= 128) {
        stem = nn::Sequential(conv(3, w, 7, 2, 3), nn::BatchNorm2d(w), nn::ReLU(),
                              nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1)));
    } else {
        stem = nn::Sequential(conv(3, w, 3, 1, 1), nn::BatchNorm2d(w), nn::ReLU());
    }
    register_module("stem", stem);
    stages = nn::Sequential();
    int in = w;
    for (std::size_t s = 0; s < config.blocks.size(); ++s) {
        const int out = w << s;
        for (int b = 0; b < config.blocks[s]; ++b) {
            stages->push_back(BasicBlock(in, out, (b == 0 && s > 0) ? 2 : 1));
            in = out;
        }
    }
    register_module("stages", stages);
    head = register_module("head", nn::Linear(in, 1));
}

torch::Tensor ResNetImpl::forward(const torch::Tensor& x) {
    auto h = stages->forward(stem->forward(x));
    h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions(1)).flatten(1);
    return head(h).view({-1});
}

ClassifierEnsemble::ClassifierEnsemble(Geometry geometry, std::vector<ProbabilityModel> members)
    : geometry_(geometry), members_(std::move(members)) {
    if (members_.empty()) throw ValidationError("classifier ensemble needs at least one member");
    if (geometry_.patch_side < 1 || geometry_.input_side < 1) throw ValidationError("classifier geometry must be positive");
}

ClassifierEnsemble ClassifierEnsemble::from_networks(Geometry geometry, const ResNetConfig& config,
                                                     std::vector<ResNet> nets) {
    std::vector<ProbabilityModel> members;
    for (auto net : nets) {
        net->eval();
        const int side = geometry.input_side;
        members.push_back([net, side](const torch::Tensor& images) mutable {
            return torch::sigmoid(net->forward(resize_bilinear(images, side)));
        });
    }
    ClassifierEnsemble ensemble(geometry, std::move(members));
    ensemble.config_ = config;
    ensemble.nets_ = std::move(nets);
    return ensemble;
}

torch::Tensor ClassifierEnsemble::member_probabilities(const torch::Tensor& images) const {
    if (images.dim() != 4 || images.size(1) != 3) throw ValidationError("classifier input must be [B, 3, S, S]");
    if (images.size(2) != geometry_.patch_side || images.size(3) != geometry_.patch_side) {
        throw ValidationError("classifier expects " + std::to_string(geometry_.patch_side) + "-pixel patches, got " +
                              std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)));
    }
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> rows;
    for (const auto& member : members_) {
        std::vector<torch::Tensor> chunks;
        for (int64_t start = 0; start < images.size(0); start += kInferenceChunk) {
            const auto end = std::min(start + kInferenceChunk, images.size(0));
            chunks.push_back(member(images.slice(0, start, end)).to(torch::kFloat64).view({-1}));
        }
        rows.push_back(torch::cat(chunks));
    }
    return torch::stack(rows);
}

torch::Tensor ClassifierEnsemble::predict_batch(const torch::Tensor& images) const {
    return member_probabilities(images).mean(0);
}

double ClassifierEnsemble::predict(const ImagePatch& patch) const {
    return predict_batch(patch.tensor().unsqueeze(0))[0].item<double>();
}

double ensemble_predict(const ClassifierEnsemble& ensemble, const ImagePatch& patch) { return ensemble.predict(patch); }

void ClassifierEnsemble::save(const std::filesystem::path& checkpoint) const {
    if (nets_.empty()) throw StateError("only network-backed ensembles can be saved");
    CheckpointWriter w(kClassifierCheckpointFormat);
    w.put("geometry.patch_side", std::int64_t{geometry_.patch_side});
    w.put("geometry.input_side", std::int64_t{geometry_.input_side});
    w.put("backbone.base_width", std::int64_t{config_.base_width});
    w.put("backbone.blocks", torch::tensor(std::vector<int64_t>(config_.blocks.begin(), config_.blocks.end())));
    w.put("members", static_cast<std::int64_t>(nets_.size()));
    for (std::size_t i = 0; i < nets_.size(); ++i) {
        torch::serialize::OutputArchive member;
        nets_[i]->save(member);
        w.put("member." + std::to_string(i), member);
    }
    w.save(checkpoint);
}

ClassifierEnsemble ClassifierEnsemble::load(const std::filesystem::path& checkpoint) {
    CheckpointReader r(checkpoint, kClassifierCheckpointFormat);
    Geometry geometry{static_cast<int>(r.get_int("geometry.patch_side")), static_cast<int>(r.get_int("geometry.input_side"))};
    ResNetConfig config;
    config.base_width = static_cast<int>(r.get_int("backbone.base_width"));
    const auto blocks = r.get_tensor("backbone.blocks").to(torch::kLong);
    config.blocks.clear();
    for (int64_t i = 0; i < blocks.numel(); ++i) config.blocks.push_back(static_cast<int>(blocks[i].item<int64_t>()));
    const auto count = r.get_int("members");
    std::vector<ResNet> nets;
    for (int64_t i = 0; i < count; ++i) {
        ResNet net(config, geometry.input_side);
        torch::serialize::InputArchive member;
        if (!r.get_nested("member." + std::to_string(i), member)) throw ValidationError(checkpoint.string() + ": missing member");
        net->load(member);
        nets.push_back(net);
    }
    return from_networks(geometry, config, std::move(nets));
}

LabeledImages make_labeled_images(std::span<const data::PatchRecord> records) {
    if (records.empty()) return {};
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    for (const auto& rec : records) {
        if (rec.image.empty()) throw ValidationError("patch '" + rec.patch_id + "' has no image");
        images.push_back(rec.image.tensor());
        labels.push_back(rec.label > 0.5 ? 1 : 0);
    }
    return {torch::stack(images), torch::tensor(labels, torch::kLong)};
}

ClassifierDataset make_classifier_dataset(std::span<const data::PatchRecord> records, double train_fraction) {
    auto [train, val] = split_by_vertical_axis(records, train_fraction);
    return {make_labeled_images(train), make_labeled_images(val)};
}

ClassifierEnsemble train_classifier(const ClassifierDataset& dataset, const ClassifierConfig& config, TrainingLog* log) {
    config.validate();
    if (dataset.train.size() == 0) throw ValidationError("classifier training split is empty");
    if (dataset.validation.size() == 0) throw ValidationError("classifier validation split is empty");
    const int patch_side = static_cast<int>(dataset.train.images.size(2));
    if (dataset.validation.images.size(2) != patch_side) throw ValidationError("train and validation patch sides differ");
    std::vector<ResNet> nets;
    for (std::size_t m = 0; m < config.seeds.size(); ++m) nets.push_back(train_member(dataset, config, m, log));
    return ClassifierEnsemble::from_networks({patch_side, config.input_side}, config.backbone, std::move(nets));
}

Metrics evaluate(const ClassifierEnsemble& ensemble, const LabeledImages& test, double threshold) {
    if (test.size() == 0) throw ValidationError("cannot evaluate an empty test set");
    const auto probs = ensemble.predict_batch(test.images).contiguous();
    const auto labels = test.labels.to(torch::kInt32).contiguous();
    return compute_metrics(std::span(probs.data_ptr<double>(), static_cast<std::size_t>(probs.numel())),
                           std::span(labels.data_ptr<int>(), static_cast<std::size_t>(labels.numel())), threshold);
}

}  // namespace mitodpm::classifier
