// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "dyncast/model.hpp"

namespace dyncast {

namespace detail {

constexpr char kCheckpointMagic[8] = {'D', 'Y', 'N', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

class ByteWriter {
  public:
    template <class T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const char* p = reinterpret_cast<const char*>(&v);
        buffer_.append(p, sizeof(T));
    }

    void put_string(const std::string& s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        buffer_.append(s);
    }

    void put_doubles(const std::vector<double>& v) {
        put<std::uint64_t>(v.size());
        buffer_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    }

    void put_bytes(const std::vector<std::uint8_t>& v) {
        put<std::uint64_t>(v.size());
        buffer_.append(reinterpret_cast<const char*>(v.data()), v.size());
    }

    const std::string& bytes() const { return buffer_; }

  private:
    std::string buffer_;
};

class ByteReader {
  public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

    template <class T>
    T get() {
        static_assert(std::is_trivially_copyable_v<T>);
        T v;
        take(sizeof(T));
        std::memcpy(&v, bytes_.data() + pos_ - sizeof(T), sizeof(T));
        return v;
    }

    std::string get_string() {
        const auto n = get<std::uint32_t>();
        take(n);
        return bytes_.substr(pos_ - n, n);
    }

    std::vector<double> get_doubles() {
        const auto n = get<std::uint64_t>();
        take(n * sizeof(double));
        std::vector<double> v(n);
        std::memcpy(v.data(), bytes_.data() + pos_ - n * sizeof(double), n * sizeof(double));
        return v;
    }

    std::vector<std::uint8_t> get_bytes() {
        const auto n = get<std::uint64_t>();
        take(n);
        std::vector<std::uint8_t> v(n);
        std::memcpy(v.data(), bytes_.data() + pos_ - n, n);
        return v;
    }

    std::size_t pos() const { return pos_; }

  private:
    void take(std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw std::runtime_error("truncated checkpoint: unexpected end of file");
        pos_ += n;
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

inline void write_config(ByteWriter& w, const ModelConfig& cfg) {
    w.put<std::uint64_t>(cfg.input_len);
    w.put<std::uint64_t>(cfg.horizon);
    w.put<std::uint64_t>(cfg.patch_len);
    w.put<std::uint64_t>(cfg.stride);
    w.put<std::uint64_t>(cfg.d_model);
    w.put<std::uint64_t>(cfg.groups);
    w.put<double>(cfg.sparse_ratio);
    w.put<std::uint64_t>(cfg.num_scales);
    w.put<std::uint64_t>(cfg.layers);
    w.put<std::uint64_t>(cfg.heads);
    w.put<double>(cfg.learning_rate);
    w.put<std::uint64_t>(cfg.batch_size);
    w.put<std::uint64_t>(cfg.epochs);
    w.put<std::uint64_t>(cfg.max_steps);
    w.put<double>(cfg.update_every_frac);
    w.put<double>(cfg.alpha);
    w.put<std::uint64_t>(cfg.seed);
    w.put<std::uint8_t>(cfg.dynamic_tokenizer ? 1 : 0);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(cfg.pe_mode));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(cfg.mask_strategy));
}

inline ModelConfig read_config(ByteReader& r) {
    ModelConfig cfg;
    cfg.input_len = r.get<std::uint64_t>();
    cfg.horizon = r.get<std::uint64_t>();
    cfg.patch_len = r.get<std::uint64_t>();
    cfg.stride = r.get<std::uint64_t>();
    cfg.d_model = r.get<std::uint64_t>();
    cfg.groups = r.get<std::uint64_t>();
    cfg.sparse_ratio = r.get<double>();
    cfg.num_scales = r.get<std::uint64_t>();
    cfg.layers = r.get<std::uint64_t>();
    cfg.heads = r.get<std::uint64_t>();
    cfg.learning_rate = r.get<double>();
    cfg.batch_size = r.get<std::uint64_t>();
    cfg.epochs = r.get<std::uint64_t>();
    cfg.max_steps = r.get<std::uint64_t>();
    cfg.update_every_frac = r.get<double>();
    cfg.alpha = r.get<double>();
    cfg.seed = r.get<std::uint64_t>();
    cfg.dynamic_tokenizer = r.get<std::uint8_t>() != 0;
    cfg.pe_mode = static_cast<PEMode>(r.get<std::uint8_t>());
    cfg.mask_strategy = static_cast<MaskStrategy>(r.get<std::uint8_t>());
    return cfg;
}

inline std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
    std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return packed;
}

inline std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& packed,
                                             std::size_t count) {
    if (packed.size() != (count + 7) / 8)
        throw std::runtime_error("checkpoint mask bitmap has the wrong size");
    std::vector<std::uint8_t> bits(count, 0);
    for (std::size_t i = 0; i < count; ++i)
        bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return bits;
}

}  // namespace detail

// Binary container: magic, format version, config block, named f64 blobs,
// mask bitmap, FNV-1a trailer.
inline void save_checkpoint(const ForecastModel& model, const std::string& path) {
    detail::ByteWriter w;
    for (char c : detail::kCheckpointMagic) w.put<char>(c);
    w.put<std::uint32_t>(detail::kCheckpointVersion);
    detail::write_config(w, model.config());

    const auto params = model.named_parameters();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, tensor] : params) {
        w.put_string(name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(tensor->shape.size()));
        for (std::size_t e : tensor->shape) w.put<std::uint64_t>(e);
        w.put_doubles(tensor->values);
    }
    w.put_bytes(detail::pack_bits(model.tokenizer().mask()));

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open checkpoint for writing: ", path);
    const std::string& body = w.bytes();
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    const std::uint64_t hash = detail::fnv1a(body);
    out.write(reinterpret_cast<const char*>(&hash), sizeof(hash));
    require(out.good(), "failed writing checkpoint: ", path);
}

inline ForecastModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw std::runtime_error("checkpoint not found: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(detail::kCheckpointMagic) + sizeof(std::uint64_t))
        throw std::runtime_error("truncated checkpoint: " + path);

    const std::uint64_t stored_hash = [&bytes] {
        std::uint64_t h;
        std::memcpy(&h, bytes.data() + bytes.size() - sizeof(h), sizeof(h));
        return h;
    }();
    bytes.resize(bytes.size() - sizeof(std::uint64_t));
    if (detail::fnv1a(bytes) != stored_hash)
        throw std::runtime_error("checkpoint integrity hash mismatch: " + path);

    detail::ByteReader r(std::move(bytes));
    char magic[8];
    for (char& c : magic) c = r.get<char>();
    if (std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const auto version = r.get<std::uint32_t>();
    if (version != detail::kCheckpointVersion)
        throw std::runtime_error(msg("unsupported checkpoint version ", version,
                                     " (expected ", detail::kCheckpointVersion, ")"));

    const ModelConfig cfg = detail::read_config(r);
    ForecastModel model(cfg);

    const auto n_params = r.get<std::uint32_t>();
    auto params = model.parameters();
    if (n_params != params.size())
        throw std::runtime_error(msg("checkpoint holds ", n_params,
                                     " parameters, model expects ", params.size()));
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.get_string();
        const auto rank = r.get<std::uint32_t>();
        std::vector<std::size_t> shape;
        for (std::uint32_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
        std::vector<double> values = r.get_doubles();
        if (name != params[i].name || shape != params[i].tensor->shape)
            throw std::runtime_error(msg("checkpoint parameter '", name, "' of shape ",
                                         shape_str(shape), " does not match model parameter '",
                                         params[i].name, "' of shape ",
                                         shape_str(params[i].tensor->shape)));
        params[i].tensor->values = std::move(values);
    }
    const auto packed = r.get_bytes();
    model.tokenizer().set_mask(
        detail::unpack_bits(packed, cfg.patch_len * cfg.d_model), !cfg.dynamic_tokenizer);
    return model;
}

}  // namespace dyncast
