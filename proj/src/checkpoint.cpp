#include "idsis/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "idsis/errors.hpp"
#include "idsis/hashing.hpp"

namespace idsis {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'I', 'D', 'S', 'I', 'S', 'C', 'K', '1'};

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1, Int64 = 2 };

DType dtype_of(const torch::Tensor& t) {
    switch (t.scalar_type()) {
        case torch::kFloat32: return DType::Float32;
        case torch::kFloat64: return DType::Float64;
        case torch::kInt64: return DType::Int64;
        default: throw ValidationError("unsupported tensor dtype in checkpoint");
    }
}

torch::ScalarType scalar_type_of(DType d) {
    switch (d) {
        case DType::Float32: return torch::kFloat32;
        case DType::Float64: return torch::kFloat64;
        case DType::Int64: return torch::kInt64;
    }
    throw IngestionError("corrupt checkpoint: unknown dtype tag");
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw IngestionError("corrupt checkpoint: truncated file");
    return value;
}

void collect(const std::string& scope, const torch::nn::Module& module,
             const std::function<void(const std::string&, const torch::Tensor&)>& visit) {
    for (const auto& item : module.named_parameters(true)) visit(scope + "/" + item.key(), item.value());
    for (const auto& item : module.named_buffers(true)) visit(scope + "/" + item.key(), item.value());
}

}  // namespace

void Checkpoint::put_module(const std::string& scope, const torch::nn::Module& module) {
    collect(scope, module, [this](const std::string& name, const torch::Tensor& t) {
        tensors[name] = t.detach().clone().contiguous();
    });
}

void Checkpoint::load_module(const std::string& scope, torch::nn::Module& module) const {
    torch::NoGradGuard no_grad;
    collect(scope, module, [this](const std::string& name, const torch::Tensor& t) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw IngestionError("checkpoint is missing tensor '" + name + "'");
        }
        if (it->second.sizes() != t.sizes()) {
            throw ShapeError("checkpoint tensor '" + name + "' has a different shape than the model");
        }
        const_cast<torch::Tensor&>(t).copy_(it->second);
    });
}

bool Checkpoint::has_scope(const std::string& scope) const {
    const auto it = tensors.lower_bound(scope + "/");
    return it != tensors.end() && it->first.rfind(scope + "/", 0) == 0;
}

const torch::Tensor& Checkpoint::at(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw IngestionError("checkpoint is missing tensor '" + name + "'");
    return it->second;
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestionError("cannot write checkpoint '" + path.string() + "'");
        out.write(kMagic, sizeof(kMagic));
        const std::string manifest = checkpoint.manifest.dump();
        write_pod<std::uint64_t>(out, manifest.size());
        out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
        write_pod<std::uint64_t>(out, checkpoint.tensors.size());
        for (const auto& [name, tensor] : checkpoint.tensors) {
            const auto t = tensor.contiguous();
            write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of(t)));
            write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
            for (const auto d : t.sizes()) write_pod<std::int64_t>(out, d);
            out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
        }
        if (!out) throw IngestionError("failed while writing checkpoint '" + path.string() + "'");
    }
    fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open checkpoint '" + path.string() + "'");
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IngestionError("'" + path.string() + "' is not an idsis checkpoint");
    }
    Checkpoint checkpoint;
    const auto manifest_size = read_pod<std::uint64_t>(in);
    std::string manifest(manifest_size, '\0');
    in.read(manifest.data(), static_cast<std::streamsize>(manifest_size));
    checkpoint.manifest = nlohmann::json::parse(manifest);
    const auto count = read_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_size = read_pod<std::uint32_t>(in);
        std::string name(name_size, '\0');
        in.read(name.data(), name_size);
        const auto dtype = scalar_type_of(static_cast<DType>(read_pod<std::uint8_t>(in)));
        const auto ndim = read_pod<std::uint32_t>(in);
        std::vector<std::int64_t> shape(ndim);
        for (auto& d : shape) d = read_pod<std::int64_t>(in);
        auto tensor = torch::empty(shape, torch::TensorOptions().dtype(dtype));
        in.read(static_cast<char*>(tensor.data_ptr()), static_cast<std::streamsize>(tensor.nbytes()));
        if (!in) throw IngestionError("corrupt checkpoint: truncated tensor '" + name + "'");
        checkpoint.tensors.emplace(std::move(name), std::move(tensor));
    }
    return checkpoint;
}

std::string module_hash(const torch::nn::Module& module) {
    std::string bytes;
    collect("m", module, [&bytes](const std::string& name, const torch::Tensor& t) {
        const auto c = t.detach().contiguous();
        bytes += name;
        bytes.append(static_cast<const char*>(c.data_ptr()), c.nbytes());
    });
    return sha256_hex(bytes);
}

}  // namespace idsis
