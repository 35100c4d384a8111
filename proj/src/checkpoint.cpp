#include "sara/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sara/config.hpp"

namespace sara {

namespace fs = std::filesystem;

namespace {

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

// Little-endian bytes of a tensor.
template <Scalar T>
std::string to_le_bytes(const Tensor<T>& t) {
    std::string bytes(t.size() * sizeof(T), '\0');
    std::memcpy(bytes.data(), t.ptr(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(T));
    }
    return bytes;
}

template <Scalar T>
void from_le_bytes(const char* src, Tensor<T>& t) {
    std::memcpy(t.ptr(), src, t.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* bytes = reinterpret_cast<char*>(t.ptr());
        for (std::size_t i = 0; i < t.size() * sizeof(T); i += sizeof(T)) std::reverse(bytes + i, bytes + i + sizeof(T));
    }
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw CheckpointError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hex32(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

}  // namespace

template <Scalar T>
void write_bundle(const fs::path& dir, const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors,
                  const nlohmann::ordered_json& meta) {
    const fs::path tmp = dir.string() + ".tmp";
    std::error_code ec;
    fs::remove_all(tmp, ec);
    fs::create_directories(tmp);

    nlohmann::ordered_json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["dtype"] = to_string(dtype_of<T>());
    for (const auto& [k, v] : meta.items()) manifest[k] = v;
    nlohmann::ordered_json table = nlohmann::ordered_json::array();

    std::ofstream blob(tmp / "weights.bin", std::ios::binary);
    if (!blob) throw CheckpointError("cannot write " + (tmp / "weights.bin").string());
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const std::string bytes = to_le_bytes(*t);
        blob.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        nlohmann::ordered_json e;
        e["name"] = name;
        e["dtype"] = to_string(dtype_of<T>());
        e["shape"] = t->shape();
        e["offset"] = offset;
        e["nbytes"] = bytes.size();
        e["crc32"] = hex32(crc_of(bytes.data(), bytes.size()));
        table.push_back(std::move(e));
        offset += bytes.size();
    }
    blob.close();
    if (!blob) throw CheckpointError("failed writing " + (tmp / "weights.bin").string());
    manifest["tensors"] = std::move(table);
    std::ofstream(tmp / "manifest.json") << manifest.dump(2) << '\n';

    fs::remove_all(dir, ec);
    fs::rename(tmp, dir);
}

Bundle read_manifest(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw CheckpointError("checkpoint directory " + dir.string() + " does not exist");
    Bundle b;
    b.manifest = nlohmann::json::parse(read_file(dir / "manifest.json"), nullptr, false);
    if (b.manifest.is_discarded() || !b.manifest.is_object()) {
        throw CheckpointError("manifest.json in " + dir.string() + " is not valid JSON");
    }
    if (!b.manifest.contains("format_version") || b.manifest["format_version"] != kCheckpointFormatVersion) {
        throw CheckpointError("unsupported checkpoint format_version " +
                              (b.manifest.contains("format_version") ? b.manifest["format_version"].dump() : "<missing>") +
                              " (expected " + std::to_string(kCheckpointFormatVersion) + ")");
    }
    try {
        b.dtype = dtype_from_string(b.manifest.at("dtype").get<std::string>());
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("manifest dtype: ") + e.what());
    }
    if (!b.manifest.contains("tensors") || !b.manifest["tensors"].is_array()) {
        throw CheckpointError("manifest.json has no tensor table");
    }
    return b;
}

template <Scalar T>
std::vector<NamedTensor<T>> read_bundle(const fs::path& dir, Bundle* manifest_out) {
    Bundle b = read_manifest(dir);
    if (b.dtype != dtype_of<T>()) {
        throw CheckpointError("checkpoint dtype " + to_string(b.dtype) + " does not match requested " +
                              to_string(dtype_of<T>()));
    }
    const std::string blob = read_file(dir / "weights.bin");
    std::vector<NamedTensor<T>> out;
    for (const auto& e : b.manifest["tensors"]) {
        const std::string name = e.value("name", std::string("<unnamed>"));
        Shape shape;
        std::uint64_t offset = 0, nbytes = 0;
        std::string crc;
        try {
            shape = e.at("shape").get<Shape>();
            offset = e.at("offset").get<std::uint64_t>();
            nbytes = e.at("nbytes").get<std::uint64_t>();
            crc = e.at("crc32").get<std::string>();
            if (e.at("dtype").get<std::string>() != to_string(dtype_of<T>())) {
                throw CheckpointError("dtype differs from manifest dtype");
            }
        } catch (const std::exception& ex) {
            throw CheckpointError("tensor '" + name + "': bad manifest entry: " + ex.what());
        }
        if (nbytes != shape_numel(shape) * sizeof(T)) {
            throw CheckpointError("tensor '" + name + "': shape " + shape_str(shape) + " disagrees with " +
                                  std::to_string(nbytes) + " bytes");
        }
        if (offset + nbytes > blob.size()) {
            throw CheckpointError("tensor '" + name + "': weights.bin truncated (need " + std::to_string(offset + nbytes) +
                                  " bytes, have " + std::to_string(blob.size()) + ")");
        }
        if (hex32(crc_of(blob.data() + offset, nbytes)) != crc) {
            throw CheckpointError("tensor '" + name + "': checksum mismatch");
        }
        Tensor<T> t(shape);
        from_le_bytes(blob.data() + offset, t);
        out.push_back({name, std::move(t)});
    }
    if (manifest_out) *manifest_out = std::move(b);
    return out;
}

template <Scalar T>
void save_checkpoint(TrainState<T>& state, const fs::path& dir) {
    Config full;
    full.train = state.config();
    nlohmann::ordered_json meta;
    meta["step"] = state.step;
    meta["gen_optimizer_steps"] = state.gen_opt.steps();
    meta["disc_optimizer_steps"] = state.disc_opt.steps();
    meta["rng_state"] = state.rng.state();
    meta["config"] = to_key_values(full, true);
    std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
    for (const auto& [name, t] : state.named_tensors()) tensors.emplace_back(name, t);
    write_bundle<T>(dir, tensors, meta);
}

std::map<std::string, std::string> checkpoint_config(const fs::path& dir) {
    const Bundle b = read_manifest(dir);
    if (!b.manifest.contains("config") || !b.manifest["config"].is_object()) {
        throw CheckpointError("manifest.json has no config block");
    }
    return b.manifest["config"].get<std::map<std::string, std::string>>();
}

template <Scalar T>
std::unique_ptr<TrainState<T>> load_checkpoint(const fs::path& dir) {
    Bundle b;
    std::vector<NamedTensor<T>> tensors = read_bundle<T>(dir, &b);
    TrainConfig cfg;
    try {
        cfg = train_config_from(b.manifest.at("config").get<std::map<std::string, std::string>>());
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    auto state = std::make_unique<TrainState<T>>(cfg);
    std::map<std::string, Tensor<T>*> slots;
    for (const auto& [name, t] : state->named_tensors()) slots[name] = t;
    for (auto& nt : tensors) {
        const auto it = slots.find(nt.name);
        if (it == slots.end()) throw CheckpointError("tensor '" + nt.name + "' is not part of this model");
        if (it->second->shape() != nt.value.shape()) {
            throw CheckpointError("tensor '" + nt.name + "': stored shape " + shape_str(nt.value.shape()) +
                                  " but model expects " + shape_str(it->second->shape()));
        }
        *it->second = std::move(nt.value);
        slots.erase(it);
    }
    if (!slots.empty()) throw CheckpointError("tensor '" + slots.begin()->first + "' missing from checkpoint");
    try {
        state->step = b.manifest.at("step").get<std::uint64_t>();
        state->gen_opt.set_steps(b.manifest.at("gen_optimizer_steps").get<std::uint64_t>());
        state->disc_opt.set_steps(b.manifest.at("disc_optimizer_steps").get<std::uint64_t>());
        state->rng.set_state(b.manifest.at("rng_state").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint manifest: ") + e.what());
    }
    return state;
}

std::string checkpoint_hash(const fs::path& dir) {
    const std::string w = read_file(dir / "weights.bin");
    const std::string m = read_file(dir / "manifest.json");
    return hex32(crc_of(w.data(), w.size())) + hex32(crc_of(m.data(), m.size()));
}

#define SARA_CKPT_INST(T)                                                                                   \
    template void write_bundle(const fs::path&, const std::vector<std::pair<std::string, const Tensor<T>*>>&, \
                               const nlohmann::ordered_json&);                                              \
    template std::vector<NamedTensor<T>> read_bundle(const fs::path&, Bundle*);                             \
    template void save_checkpoint(TrainState<T>&, const fs::path&);                                         \
    template std::unique_ptr<TrainState<T>> load_checkpoint(const fs::path&);

SARA_CKPT_INST(float)
SARA_CKPT_INST(double)

}  // namespace sara
