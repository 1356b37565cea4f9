#pragma once

#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pepnet/array.hpp"
#include "pepnet/errors.hpp"
#include "pepnet/model.hpp"

namespace pepnet::ckpt {

// Binary container: magic "PEPW", u32 version, u64 record count, then per
// record: u32 name length, UTF-8 name, u8 dtype tag, u32 rank, u64 dims,
// raw little-endian scalars. Round-trips bit-exactly.
inline constexpr char kMagic[4] = {'P', 'E', 'P', 'W'};
inline constexpr uint32_t kVersion = 1;

enum class DType : uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
    return DType::f32;
}
template <>
constexpr DType dtype_of<double>() {
    return DType::f64;
}

struct Record {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<std::byte> raw;
};

void write_records(std::ostream& out, std::span<const Record> records);
std::vector<Record> read_records(std::istream& in);
void write_file(const std::string& path, std::span<const Record> records);
std::vector<Record> read_file(const std::string& path);

template <typename T>
Record make_record(std::string name, const Array<T>& a) {
    Record r;
    r.name = std::move(name);
    r.dtype = dtype_of<T>();
    r.shape = a.shape();
    r.raw.resize(static_cast<size_t>(a.numel()) * sizeof(T));
    std::memcpy(r.raw.data(), a.data(), r.raw.size());
    return r;
}

template <typename T>
Array<T> record_to_array(const Record& r) {
    if (r.dtype != dtype_of<T>())
        throw Error("record '" + r.name + "' holds a different scalar type than requested");
    Array<T> a(r.shape);
    if (r.raw.size() != static_cast<size_t>(a.numel()) * sizeof(T))
        throw Error("record '" + r.name + "' payload size does not match its dims");
    std::memcpy(a.data(), r.raw.data(), r.raw.size());
    return a;
}

// ---------------------------------------------------------------------------
// Model-level checkpoints. The architecture travels inside the same container
// as f64 records under the reserved "config/" prefix, so one file restores a
// model completely.
// ---------------------------------------------------------------------------

namespace detail {

inline Record scalar_record(const std::string& name, double v) {
    return make_record(name, Array<double>({1}, v));
}

inline Record vector_record(const std::string& name, const std::vector<int64_t>& v) {
    Array<double> a({static_cast<int64_t>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) a[static_cast<int64_t>(i)] = static_cast<double>(v[i]);
    return make_record(name, a);
}

}  // namespace detail

std::vector<Record> config_records(const ModelConfig& cfg);
ModelConfig config_from_records(const std::vector<Record>& records);

template <typename T>
void save_model(const std::string& path, Model<T>& model) {
    std::vector<Record> records = config_records(model.config());
    for (auto& p : model.state_tensors()) records.push_back(make_record<T>(p.name, *p.array));
    write_file(path, records);
}

template <typename T>
Model<T> load_model(const std::string& path, uint64_t seed = 1) {
    std::vector<Record> records = read_file(path);
    ModelConfig cfg = config_from_records(records);
    Model<T> model(cfg, seed);
    size_t restored = 0;
    for (auto& p : model.state_tensors()) {
        const Record* found = nullptr;
        for (const Record& r : records)
            if (r.name == p.name) {
                found = &r;
                break;
            }
        if (!found) throw Error("checkpoint is missing tensor '" + p.name + "'");
        Array<T> a = record_to_array<T>(*found);
        if (a.shape() != p.array->shape())
            throw Error("checkpoint tensor '" + p.name + "' has shape " + shape_str(a.shape()) + ", expected " +
                        shape_str(p.array->shape()));
        *p.array = std::move(a);
        ++restored;
    }
    const size_t tensor_records = records.size() - config_records(cfg).size();
    if (restored != tensor_records)
        throw Error("checkpoint holds " + std::to_string(tensor_records) + " tensors, model consumed " +
                    std::to_string(restored));
    return model;
}

}  // namespace pepnet::ckpt
