#include "fmnet/netcore.hpp"

#include "fmnet/digest.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fmnet {

void LatentCode::validate() const {
    if (mu.size() != kLatentDim || log_var.size() != kLatentDim || z.size() != kLatentDim)
        throw std::invalid_argument("latent code: every vector must have length 2048");
    for (double lv : log_var) {
        const double v = std::exp(lv);
        if (!std::isfinite(v) || v <= 0.0)
            throw std::domain_error("latent code: exp(log_var) must be finite and positive");
    }
}

template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& log_var, const Tensor<T>& eps) {
    if (mu.shape() != log_var.shape() || mu.shape() != eps.shape())
        throw std::invalid_argument("reparameterize: shape mismatch " + shape_string(mu.shape()) +
                                    " / " + shape_string(log_var.shape()) + " / " +
                                    shape_string(eps.shape()));
    Tensor<T> z = mu;
    for (std::size_t i = 0; i < z.size(); ++i)
        z.data[i] += eps.data[i] * std::exp(T(0.5) * log_var.data[i]);
    return z;
}

template <typename T>
void reparameterize_backward(const Tensor<T>& log_var, const Tensor<T>& eps,
                             const Tensor<T>& grad_z, Tensor<T>& grad_mu,
                             Tensor<T>& grad_log_var) {
    for (std::size_t i = 0; i < grad_z.size(); ++i) {
        grad_mu.data[i] += grad_z.data[i];
        grad_log_var.data[i] +=
            grad_z.data[i] * eps.data[i] * T(0.5) * std::exp(T(0.5) * log_var.data[i]);
    }
}

template <typename T>
Tensor<T> standard_normal_like(const Tensor<T>& like, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor<T> eps(like.n, like.c, like.h, like.w);
    for (auto& v : eps.data) v = static_cast<T>(dist(rng));
    return eps;
}

namespace {

void record(ShapeTrace* trace, const std::string& name, const std::array<int, 4>& shape) {
    if (trace) trace->emplace_back(name, shape);
}

template <typename T>
void append(std::vector<Param<T>*>& out, std::vector<Param<T>*> more) {
    out.insert(out.end(), more.begin(), more.end());
}

template <typename T>
void append(std::vector<Buffer<T>*>& out, std::vector<Buffer<T>*> more) {
    out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

// --------------------------------------------------------------- Encoder

// Padding 2 on the 5x5 stride-2 convolutions reproduces 48x80 -> 24x40 -> 12x20 -> 6x10.
template <typename T>
Encoder<T>::Encoder(bool variational)
    : variational_(variational),
      conv1_("encoder.conv1", 1, 32, 5, 2, 2),
      conv2_("encoder.conv2", 32, 64, 5, 2, 2),
      conv3_("encoder.conv3", 64, 128, 5, 2, 2),
      bn1_("encoder.bn1", 32),
      bn2_("encoder.bn2", 64),
      bn3_("encoder.bn3", 128),
      bn_fc_("encoder.bn_fc", 1024),
      fc_("encoder.fc", 7680, 1024),
      mu_head_(variational ? "encoder.mu" : "encoder.latent", 1024, kLatentDim),
      log_var_head_("encoder.log_var", 1024, kLatentDim) {}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(const Tensor<T>& x, Pass pass, ShapeTrace* trace) {
    require_shape(x, 1, kDopplerBins, kTimeFrames, "encoder input");
    record(trace, "input", x.shape());
    Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x, pass), pass), pass);
    record(trace, "EC1", h.shape());
    h = relu2_.forward(bn2_.forward(conv2_.forward(h, pass), pass), pass);
    record(trace, "EC2", h.shape());
    h = relu3_.forward(bn3_.forward(conv3_.forward(h, pass), pass), pass);
    record(trace, "EC3", h.shape());
    pre_flatten_ = h.shape();
    h = h.flattened();
    record(trace, "EF", h.shape());
    h = relu_fc_.forward(bn_fc_.forward(fc_.forward(h, pass), pass), pass);
    record(trace, "EL1", h.shape());

    EncoderOutput<T> out;
    out.mu = mu_head_.forward(h, pass);
    record(trace, variational_ ? "mu" : "latent", out.mu.shape());
    if (variational_) {
        out.log_var = log_var_head_.forward(h, pass);
        record(trace, "var", out.log_var.shape());
    }
    return out;
}

template <typename T>
Tensor<T> Encoder<T>::backward(const Tensor<T>& grad_mu, const Tensor<T>* grad_log_var) {
    Tensor<T> g = mu_head_.backward(grad_mu);
    if (variational_ && grad_log_var) {
        const Tensor<T> g2 = log_var_head_.backward(*grad_log_var);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += g2.data[i];
    }
    g = fc_.backward(bn_fc_.backward(relu_fc_.backward(g)));
    g = g.reshaped(pre_flatten_[1], pre_flatten_[2], pre_flatten_[3]);
    g = conv3_.backward(bn3_.backward(relu3_.backward(g)));
    g = conv2_.backward(bn2_.backward(relu2_.backward(g)));
    return conv1_.backward(bn1_.backward(relu1_.backward(g)));
}

template <typename T>
void Encoder<T>::init(std::mt19937_64& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
    fc_.init(rng);
    mu_head_.init(rng);
    if (variational_) log_var_head_.init(rng);
    for (auto* bn : {&bn1_, &bn2_, &bn3_, &bn_fc_}) bn->init();
}

template <typename T>
void Encoder<T>::zero() {
    conv1_.zero();
    conv2_.zero();
    conv3_.zero();
    fc_.zero();
    mu_head_.zero();
    log_var_head_.zero();
}

template <typename T>
std::vector<Param<T>*> Encoder<T>::params() {
    std::vector<Param<T>*> out;
    append(out, conv1_.params());
    append(out, bn1_.params());
    append(out, conv2_.params());
    append(out, bn2_.params());
    append(out, conv3_.params());
    append(out, bn3_.params());
    append(out, fc_.params());
    append(out, bn_fc_.params());
    append(out, mu_head_.params());
    if (variational_) append(out, log_var_head_.params());
    return out;
}

template <typename T>
std::vector<Buffer<T>*> Encoder<T>::buffers() {
    std::vector<Buffer<T>*> out;
    for (auto* bn : {&bn1_, &bn2_, &bn3_, &bn_fc_}) append(out, bn->buffers());
    return out;
}

// --------------------------------------------------------------- Decoder

// Transposed convolutions use padding 2 and output padding 1 so each doubles
// the grid: 6x10 -> 12x20 -> 24x40 -> 48x80.
template <typename T>
Decoder<T>::Decoder()
    : fc_("decoder.fc", kLatentDim, 7680),
      bn_fc_("decoder.bn_fc", 7680),
      up1_("decoder.up1", 128, 64, 5, 2, 2, 1),
      up2_("decoder.up2", 64, 32, 5, 2, 2, 1),
      up3_("decoder.up3", 32, 16, 5, 2, 2, 1),
      bn1_("decoder.bn1", 64),
      bn2_("decoder.bn2", 32),
      bn3_("decoder.bn3", 16),
      out_conv_("decoder.out", 16, 1, 5, 1, 2) {}

template <typename T>
Tensor<T> Decoder<T>::forward(const Tensor<T>& z, Pass pass, ShapeTrace* trace) {
    require_shape(z, kLatentDim, 1, 1, "decoder input");
    record(trace, "input", z.shape());
    Tensor<T> h = bn_fc_.forward(fc_.forward(z, pass), pass);
    record(trace, "DL1", h.shape());
    h = h.reshaped(128, 6, 10);
    record(trace, "DUF", h.shape());
    h = relu1_.forward(bn1_.forward(up1_.forward(h, pass), pass), pass);
    record(trace, "DCT1", h.shape());
    h = relu2_.forward(bn2_.forward(up2_.forward(h, pass), pass), pass);
    record(trace, "DCT2", h.shape());
    h = relu3_.forward(bn3_.forward(up3_.forward(h, pass), pass), pass);
    record(trace, "DCT3", h.shape());
    h = sigmoid_.forward(out_conv_.forward(h, pass), pass);
    record(trace, "DC1", h.shape());
    return h;
}

template <typename T>
Tensor<T> Decoder<T>::backward(const Tensor<T>& grad_out) {
    Tensor<T> g = out_conv_.backward(sigmoid_.backward(grad_out));
    g = up3_.backward(bn3_.backward(relu3_.backward(g)));
    g = up2_.backward(bn2_.backward(relu2_.backward(g)));
    g = up1_.backward(bn1_.backward(relu1_.backward(g)));
    g = g.flattened();
    return fc_.backward(bn_fc_.backward(g));
}

template <typename T>
void Decoder<T>::init(std::mt19937_64& rng) {
    fc_.init(rng);
    up1_.init(rng);
    up2_.init(rng);
    up3_.init(rng);
    out_conv_.init(rng);
    for (auto* bn : {&bn_fc_, &bn1_, &bn2_, &bn3_}) bn->init();
}

template <typename T>
void Decoder<T>::zero() {
    fc_.zero();
    up1_.zero();
    up2_.zero();
    up3_.zero();
    out_conv_.zero();
}

template <typename T>
std::vector<Param<T>*> Decoder<T>::params() {
    std::vector<Param<T>*> out;
    append(out, fc_.params());
    append(out, bn_fc_.params());
    append(out, up1_.params());
    append(out, bn1_.params());
    append(out, up2_.params());
    append(out, bn2_.params());
    append(out, up3_.params());
    append(out, bn3_.params());
    append(out, out_conv_.params());
    return out;
}

template <typename T>
std::vector<Buffer<T>*> Decoder<T>::buffers() {
    std::vector<Buffer<T>*> out;
    for (auto* bn : {&bn_fc_, &bn1_, &bn2_, &bn3_}) append(out, bn->buffers());
    return out;
}

// --------------------------------------------------------- Discriminator

template <typename T>
Discriminator<T>::Discriminator()
    : fc1_("discriminator.fc1", kLatentDim, 1000),
      fc2_("discriminator.fc2", 1000, 500),
      fc3_("discriminator.fc3", 500, 215),
      fc4_("discriminator.fc4", 215, 1) {}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& z, Pass pass, ShapeTrace* trace) {
    require_shape(z, kLatentDim, 1, 1, "discriminator input");
    Tensor<T> h = relu1_.forward(fc1_.forward(z, pass), pass);
    record(trace, "DSL1", h.shape());
    h = relu2_.forward(fc2_.forward(h, pass), pass);
    record(trace, "DSL2", h.shape());
    h = relu3_.forward(fc3_.forward(h, pass), pass);
    record(trace, "DSL3", h.shape());
    h = fc4_.forward(h, pass);
    record(trace, "DSL4", h.shape());
    return h;
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const Tensor<T>& grad_logit) {
    Tensor<T> g = fc4_.backward(grad_logit);
    g = fc3_.backward(relu3_.backward(g));
    g = fc2_.backward(relu2_.backward(g));
    return fc1_.backward(relu1_.backward(g));
}

template <typename T>
void Discriminator<T>::init(std::mt19937_64& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
    fc3_.init(rng);
    fc4_.init(rng);
}

template <typename T>
void Discriminator<T>::zero() {
    fc1_.zero();
    fc2_.zero();
    fc3_.zero();
    fc4_.zero();
}

template <typename T>
std::vector<Param<T>*> Discriminator<T>::params() {
    std::vector<Param<T>*> out;
    append(out, fc1_.params());
    append(out, fc2_.params());
    append(out, fc3_.params());
    append(out, fc4_.params());
    return out;
}

template <typename T>
Tensor<T> probabilities(const Tensor<T>& logits) {
    Tensor<T> p = logits;
    for (auto& v : p.data) v = sigmoid(v);
    return p;
}

// --------------------------------------------------------------- Network

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::fmnet: return "fmnet";
        case ModelKind::smnet: return "smnet";
        case ModelKind::nonr: return "nonr";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "fmnet") return ModelKind::fmnet;
    if (s == "smnet") return ModelKind::smnet;
    if (s == "nonr" || s == "nonr-fmnet") return ModelKind::nonr;
    throw std::invalid_argument("unknown model kind '" + s + "'");
}

template <typename T>
Network<T>::Network(ModelKind kind_) : kind(kind_), encoder(kind_ != ModelKind::nonr) {}

template <typename T>
void Network<T>::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    encoder.init(rng);
    decoder.init(rng);
    if (has_discriminator()) discriminator.init(rng);
}

template <typename T>
void Network<T>::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

template <typename T>
std::vector<Param<T>*> Network<T>::params() {
    auto out = encoder.params();
    append(out, decoder.params());
    if (has_discriminator()) append(out, discriminator.params());
    return out;
}

template <typename T>
std::vector<Buffer<T>*> Network<T>::buffers() {
    auto out = encoder.buffers();
    append(out, decoder.buffers());
    return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->size();
    return n;
}

namespace {

template <typename T>
std::string describe(const std::vector<Param<T>*>& params, const std::vector<Buffer<T>*>& buffers) {
    std::ostringstream os;
    for (auto* p : params) {
        os << "param " << p->name;
        for (int d : p->shape) os << ' ' << d;
        os << '\n';
    }
    for (auto* b : buffers) os << "buffer " << b->name << ' ' << b->value.size() << '\n';
    return os.str();
}

}  // namespace

ArchInfo architecture(ModelKind kind) {
    Network<float> net(kind);
    ArchInfo info;
    auto ae_params = net.encoder.params();
    append(ae_params, net.decoder.params());
    const std::string ae = describe(ae_params, net.buffers());
    info.autoencoder_hash = sha256_hex(ae);
    std::string full = "model " + to_string(kind) + "\n" + ae;
    if (net.has_discriminator()) full += describe(net.discriminator.params(), {});
    info.parameter_count = net.parameter_count();
    full += "parameters " + std::to_string(info.parameter_count) + "\n";
    info.arch_hash = sha256_hex(full);
    return info;
}

template <typename T>
std::string parameter_digest(const std::vector<Param<T>*>& params) {
    Sha256 h;
    for (auto* p : params) {
        h.update(p->name);
        h.update(std::span<const T>(p->value));
    }
    return h.hex();
}

// ------------------------------------------------------------ Checkpoint

nlohmann::json CheckpointMeta::to_json() const {
    return {{"arch_hash", arch_hash},
            {"model", to_string(kind)},
            {"phase_completed", phase_completed},
            {"epoch", epoch},
            {"master_seed", master_seed},
            {"metrics", metrics}};
}

CheckpointMeta CheckpointMeta::from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.arch_hash = j.at("arch_hash").get<std::string>();
    m.kind = model_kind_from_string(j.at("model").get<std::string>());
    m.phase_completed = j.at("phase_completed").get<int>();
    m.epoch = j.at("epoch").get<int>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.metrics = j.value("metrics", nlohmann::json::object());
    return m;
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");
constexpr char kCheckpointMagic[8] = {'F', 'M', 'N', 'E', 'T', 'C', 'K', '1'};

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
    return std::filesystem::path(stem.string() + ext);
}

template <typename V>
void write_block(std::ofstream& out, const std::string& name, const V& values) {
    const auto name_len = static_cast<std::uint32_t>(name.size());
    const auto count = static_cast<std::uint64_t>(values.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof name_len);
    out.write(name.data(), name_len);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(count * sizeof(float)));
}

template <typename V>
void read_block(std::ifstream& in, const std::string& name, V& values) {
    std::uint32_t name_len = 0;
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
    std::string got(name_len, '\0');
    in.read(got.data(), name_len);
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in || got != name || count != values.size())
        throw CheckpointError("checkpoint block mismatch: expected '" + name + "', found '" + got + "'");
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw CheckpointError("checkpoint truncated in block '" + name + "'");
}

}  // namespace

void save_checkpoint(Network<float>& net, const CheckpointMeta& meta,
                     const std::filesystem::path& stem) {
    {
        std::ofstream out(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + with_ext(stem, ".bin").string());
        out.write(kCheckpointMagic, sizeof kCheckpointMagic);
        for (auto* p : net.params()) write_block(out, p->name, p->value);
        for (auto* b : net.buffers()) write_block(out, b->name, b->value);
        if (!out) throw CheckpointError("write failed: " + with_ext(stem, ".bin").string());
    }
    std::ofstream js(with_ext(stem, ".json"), std::ios::trunc);
    if (!js) throw CheckpointError("cannot write " + with_ext(stem, ".json").string());
    js << meta.to_json().dump(2) << '\n';
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& stem) {
    std::ifstream js(with_ext(stem, ".json"));
    if (!js) throw CheckpointError("missing checkpoint metadata: " + with_ext(stem, ".json").string());
    try {
        return CheckpointMeta::from_json(nlohmann::json::parse(js));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint metadata " + with_ext(stem, ".json").string() +
                              ": " + e.what());
    }
}

CheckpointMeta load_checkpoint(Network<float>& net, const std::filesystem::path& stem) {
    CheckpointMeta meta = read_checkpoint_meta(stem);
    const ArchInfo arch = architecture(net.kind);
    if (meta.kind != net.kind || meta.arch_hash != arch.arch_hash)
        throw CheckpointError("architecture mismatch: checkpoint " + stem.string() + " has arch_hash " +
                              meta.arch_hash + " (" + to_string(meta.kind) + "), expected " +
                              arch.arch_hash + " (" + to_string(net.kind) + ")");
    std::ifstream in(with_ext(stem, ".bin"), std::ios::binary);
    if (!in) throw CheckpointError("missing checkpoint blob: " + with_ext(stem, ".bin").string());
    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw CheckpointError("not a checkpoint blob: " + with_ext(stem, ".bin").string());
    for (auto* p : net.params()) read_block(in, p->name, p->value);
    for (auto* b : net.buffers()) read_block(in, b->name, b->value);
    return meta;
}

#define FMNET_NETCORE_INSTANTIATE(T)                                                        \
    template Tensor<T> reparameterize<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
    template void reparameterize_backward<T>(const Tensor<T>&, const Tensor<T>&,             \
                                             const Tensor<T>&, Tensor<T>&, Tensor<T>&);      \
    template Tensor<T> standard_normal_like<T>(const Tensor<T>&, std::mt19937_64&);         \
    template Tensor<T> probabilities<T>(const Tensor<T>&);                                  \
    template std::string parameter_digest<T>(const std::vector<Param<T>*>&);                \
    template class Encoder<T>;                                                              \
    template class Decoder<T>;                                                              \
    template class Discriminator<T>;                                                        \
    template struct Network<T>;

FMNET_NETCORE_INSTANTIATE(float)
FMNET_NETCORE_INSTANTIATE(double)

}  // namespace fmnet
