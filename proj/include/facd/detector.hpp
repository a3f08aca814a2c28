#pragma once

#include "facd/nn.hpp"

#include <cstdint>
#include <vector>

namespace facd::detect {

using ad::Mat;
using ad::Var;
using nn::json;

enum class EnqueueMode {
    embedding,       // encoder outputs z
    reconstruction,  // memory reads z~
};

struct MemoryConfig {
    bool enabled = true;
    int size = 512;
    double tau = 1.0;
    EnqueueMode enqueue = EnqueueMode::embedding;
    bool strict = false;  // reading an unfilled bank throws instead of bypassing
};

// Attention read softmax(z Q^T / tau) Q, differentiable in both z and Q.
Var memory_attention(const Var& z, const Var& bank, double tau);

class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(int size, int dim, double tau, bool strict = false);

    // Returns z unchanged until the bank has been filled once.
    Var read(const Var& z) const;
    Mat attention_weights(const Mat& z) const;
    // FIFO: overwrites the oldest rows, advancing the cursor.
    void enqueue(const Mat& rows);

    bool filled() const { return count_ >= size_; }
    int count() const { return count_; }
    int cursor() const { return cursor_; }
    int size() const { return size_; }
    double tau() const { return tau_; }
    const Mat& entries() const { return entries_; }

    json to_json() const;
    static MemoryBank from_json(const json& j);

private:
    Mat entries_;
    int size_ = 0;
    int count_ = 0;
    int cursor_ = 0;
    double tau_ = 1.0;
    bool strict_ = false;
};

struct LossWeights {
    double alpha = 50.0;
    double beta = 1.0;
    double lambda = 10.0;
};

// alpha * mean_i ||x_i - xhat_i||_1 - beta * mean(critic scores)
Var generator_loss(const Var& x, const Var& xhat, const Var& critic_scores, const LossWeights& w);
Var critic_loss(const Var& real_scores, const Var& fake_scores, const Var& penalty, double lambda);

struct DetectorConfig {
    std::vector<int> encoder{512, 256, 256, 256, 256, 256};  // hidden widths then latent width
    std::vector<int> critic{512, 64, 64, 64};
    MemoryConfig memory;
    LossWeights weights;
    nn::AdamConfig adam;
    int epochs = 100;
    int batch_size = 256;
    int critic_steps = 1;

    int latent_dim() const { return encoder.back(); }
    void validate() const;
};

nn::MlpSpec encoder_spec(int n_features, const std::vector<int>& widths);
nn::MlpSpec decoder_spec(int n_features, const std::vector<int>& widths);
nn::MlpSpec critic_spec(int n_features, const std::vector<int>& widths);

class Detector {
public:
    Detector() = default;
    Detector(int n_features, DetectorConfig cfg, std::uint64_t seed);

    Var reconstruct(const Var& x) const;
    Mat reconstruct(const Mat& x) const;
    int n_features() const { return encoder.in_dim(); }

    nn::ParamList generator_parameters() const;

    DetectorConfig cfg;
    nn::Mlp encoder;
    nn::Mlp decoder;
    nn::Mlp critic;
    MemoryBank memory;

    json to_json() const;
    static Detector from_json(const json& j);
};

struct TrainLog {
    std::vector<double> generator_loss;  // per epoch, mean over batches
    std::vector<double> critic_loss;
};

Detector train_phase1(const Mat& reference, const DetectorConfig& cfg, std::uint64_t seed, TrainLog* log = nullptr);

// delta = X - reconstruction(X)
Mat reconstruction_deviation(const Detector& model, const Mat& x);

json detector_config_to_json(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json(const json& j);

}  // namespace facd::detect
