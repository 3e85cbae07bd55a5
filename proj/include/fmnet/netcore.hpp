#pragma once

#include "fmnet/layers.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fmnet {

inline constexpr int kDopplerBins = 48;
inline constexpr int kTimeFrames = 80;
inline constexpr int kPixels = kDopplerBins * kTimeFrames;
inline constexpr int kLatentDim = 2048;

/// (layer name, tensor shape) pairs recorded during a forward pass.
using ShapeTrace = std::vector<std::pair<std::string, std::array<int, 4>>>;

/// Latent distribution of a single spectrogram.
struct LatentCode {
    std::vector<double> mu;
    std::vector<double> log_var;
    std::vector<double> z;

    /// Throws if the lengths are not kLatentDim or exp(log_var) is not finite and positive.
    void validate() const;
};

/// z = mu + eps * exp(0.5 * log_var), elementwise.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& log_var, const Tensor<T>& eps);

/// Chain rule for reparameterize(): accumulates dz into dmu and dlog_var.
template <typename T>
void reparameterize_backward(const Tensor<T>& log_var, const Tensor<T>& eps,
                             const Tensor<T>& grad_z, Tensor<T>& grad_mu,
                             Tensor<T>& grad_log_var);

/// Standard-normal noise with the shape of `like`.
template <typename T>
Tensor<T> standard_normal_like(const Tensor<T>& like, std::mt19937_64& rng);

template <typename T>
struct EncoderOutput {
    Tensor<T> mu;
    Tensor<T> log_var;  // empty for a deterministic encoder
};

/// Spectrogram encoder: three stride-2 5x5 convolutions, a 1024-wide dense
/// layer, then either (mu, log_var) heads or one deterministic latent head.
template <typename T>
class Encoder {
public:
    explicit Encoder(bool variational = true);

    EncoderOutput<T> forward(const Tensor<T>& x, Pass pass, ShapeTrace* trace = nullptr);
    /// grad_log_var may be null (deterministic encoder, or no gradient on that head).
    Tensor<T> backward(const Tensor<T>& grad_mu, const Tensor<T>* grad_log_var);

    void init(std::mt19937_64& rng);
    void zero();
    [[nodiscard]] bool variational() const { return variational_; }
    std::vector<Param<T>*> params();
    std::vector<Buffer<T>*> buffers();

private:
    bool variational_;
    Conv2d<T> conv1_, conv2_, conv3_;
    BatchNorm<T> bn1_, bn2_, bn3_, bn_fc_;
    ReLU<T> relu1_, relu2_, relu3_, relu_fc_;
    Linear<T> fc_, mu_head_, log_var_head_;
    std::array<int, 4> pre_flatten_{};
};

/// Latent-to-spectrogram decoder ending in a sigmoid, output (N,1,48,80).
template <typename T>
class Decoder {
public:
    Decoder();

    Tensor<T> forward(const Tensor<T>& z, Pass pass, ShapeTrace* trace = nullptr);
    Tensor<T> backward(const Tensor<T>& grad_out);

    void init(std::mt19937_64& rng);
    void zero();
    std::vector<Param<T>*> params();
    std::vector<Buffer<T>*> buffers();

private:
    Linear<T> fc_;
    BatchNorm<T> bn_fc_;
    ConvTranspose2d<T> up1_, up2_, up3_;
    BatchNorm<T> bn1_, bn2_, bn3_;
    ReLU<T> relu1_, relu2_, relu3_;
    Conv2d<T> out_conv_;
    Sigmoid<T> sigmoid_;
};

/// Latent discriminator 2048 -> 1000 -> 500 -> 215 -> 1. forward() returns the
/// logit; the probability of "simulated" is sigmoid(logit).
template <typename T>
class Discriminator {
public:
    Discriminator();

    Tensor<T> forward(const Tensor<T>& z, Pass pass, ShapeTrace* trace = nullptr);
    Tensor<T> backward(const Tensor<T>& grad_logit);

    void init(std::mt19937_64& rng);
    void zero();
    std::vector<Param<T>*> params();

private:
    Linear<T> fc1_, fc2_, fc3_, fc4_;
    ReLU<T> relu1_, relu2_, relu3_;
};

template <typename T>
Tensor<T> probabilities(const Tensor<T>& logits);

enum class ModelKind { fmnet, smnet, nonr };
std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Autoencoder plus, for the adversarial models, a latent discriminator.
template <typename T>
struct Network {
    explicit Network(ModelKind kind = ModelKind::fmnet);

    ModelKind kind;
    Encoder<T> encoder;
    Decoder<T> decoder;
    Discriminator<T> discriminator;

    [[nodiscard]] bool has_discriminator() const { return kind != ModelKind::smnet; }
    void init(std::uint64_t seed);
    void zero_grad();

    std::vector<Param<T>*> params();
    std::vector<Buffer<T>*> buffers();
    std::size_t parameter_count();
};

/// Architecture digests. `autoencoder` covers the encoder and decoder only
/// and is shared by models with identical layers.
struct ArchInfo {
    std::string arch_hash;
    std::string autoencoder_hash;
    std::size_t parameter_count = 0;
};
ArchInfo architecture(ModelKind kind);

/// SHA-256 over the learnable values of a parameter list.
template <typename T>
std::string parameter_digest(const std::vector<Param<T>*>& params);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
    std::string arch_hash;
    ModelKind kind = ModelKind::fmnet;
    int phase_completed = 0;
    int epoch = 0;
    std::uint64_t master_seed = 0;
    nlohmann::json metrics = nlohmann::json::object();

    [[nodiscard]] nlohmann::json to_json() const;
    static CheckpointMeta from_json(const nlohmann::json& j);
};

/// Writes `<stem>.bin` (parameters and running statistics, little-endian f32)
/// and `<stem>.json` (metadata).
void save_checkpoint(Network<float>& net, const CheckpointMeta& meta,
                     const std::filesystem::path& stem);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& stem);
/// Loads into `net` after verifying the architecture digest.
CheckpointMeta load_checkpoint(Network<float>& net, const std::filesystem::path& stem);

}  // namespace fmnet
