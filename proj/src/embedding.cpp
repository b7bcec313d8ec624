// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbvqa/embedding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "kbvqa/error.hpp"
#include "kbvqa/io.hpp"

static_assert(std::endian::native == std::endian::little,
              "EVEC I/O assumes a little-endian host");
static_assert(std::numeric_limits<float>::is_iec559);

namespace kbvqa {

EmbeddingMatrix::EmbeddingMatrix(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw DataError("embedding dim must be positive");
}

void EmbeddingMatrix::reserve(std::size_t rows) {
    ids_.reserve(rows);
    values_.reserve(rows * dim_);
    index_.reserve(rows);
}

void EmbeddingMatrix::add(std::string id, std::span<const float> vector) {
    if (dim_ == 0) throw DataError("embedding matrix has no dimension");
    if (vector.size() != dim_) {
        throw DataError("row " + id + " has dim " + std::to_string(vector.size()) +
                        ", expected " + std::to_string(dim_));
    }
    if (normalized_ && !is_unit(vector)) {
        throw DataError("row " + id + " is not unit length in a normalized matrix");
    }
    auto [it, inserted] = index_.emplace(id, ids_.size());
    if (!inserted) throw DataError("duplicate id: " + id);
    ids_.push_back(std::move(id));
    values_.insert(values_.end(), vector.begin(), vector.end());
}

std::optional<std::size_t> EmbeddingMatrix::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::span<const float> EmbeddingMatrix::at(std::string_view id) const {
    auto row_index = find(id);
    if (!row_index) throw DataError("no embedding for id " + std::string(id));
    return row(*row_index);
}

void EmbeddingMatrix::mark_normalized() {
    for (std::size_t i = 0; i < size(); ++i) {
        if (!is_unit(row(i))) throw DataError("row " + ids_[i] + " is not unit length");
    }
    normalized_ = true;
}

bool EmbeddingMatrix::operator==(const EmbeddingMatrix& other) const {
    if (dim_ != other.dim_ || normalized_ != other.normalized_ || ids_ != other.ids_) return false;
    // Bitwise comparison so NaN payloads and signed zeros count.
    return values_.size() == other.values_.size() &&
           std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(float)) == 0;
}

float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

float l2_norm(std::span<const float> v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return static_cast<float>(std::sqrt(acc));
}

bool is_unit(std::span<const float> v, float tolerance) {
    return std::fabs(l2_norm(v) - 1.0f) <= tolerance;
}

std::vector<float> normalized_copy(std::span<const float> v) {
    const double norm = l2_norm(v);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DataError("cannot normalize a zero or non-finite vector");
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

EmbeddingMatrix normalize(const EmbeddingMatrix& m) {
    if (m.normalized()) return m;
    EmbeddingMatrix out = m;
    for (std::size_t r = 0; r < m.size(); ++r) {
        auto src = m.row(r);
        const double norm = l2_norm(src);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw DataError("cannot normalize zero-norm row " + m.id(r));
        }
        float* dst = out.values_.data() + r * m.dim();
        for (std::size_t i = 0; i < m.dim(); ++i) dst[i] = static_cast<float>(src[i] / norm);
    }
    out.normalized_ = true;
    return out;
}

namespace {

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

class EvecReader {
public:
    explicit EvecReader(std::istream& in) : in_(in) {}

    template <typename T>
    T get(const char* what) {
        T value{};
        bytes(reinterpret_cast<char*>(&value), sizeof(T), what);
        return value;
    }

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(in_.gcount());
        if (got != n) {
            throw DataError("EVEC truncated at byte offset " + std::to_string(offset_ + got) +
                            " while reading " + what);
        }
        offset_ += n;
    }

    std::uint64_t offset() const { return offset_; }

private:
    std::istream& in_;
    std::uint64_t offset_ = 0;
};

}  // namespace

void write_evec(const EmbeddingMatrix& m, std::ostream& out) {
    out.write(kEvecMagic, 4);
    put<std::uint32_t>(out, kEvecVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
    put<std::uint64_t>(out, m.size());
    put<std::uint8_t>(out, m.normalized() ? 1 : 0);
    for (std::size_t r = 0; r < m.size(); ++r) {
        const auto& id = m.id(r);
        if (id.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw DataError("id too long for EVEC: " + id.substr(0, 64));
        }
        put<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
        auto row = m.row(r);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw DataError("EVEC write failed");
}

EmbeddingMatrix read_evec(std::istream& in) {
    EvecReader reader(in);
    char magic[4];
    reader.bytes(magic, 4, "magic");
    if (std::memcmp(magic, kEvecMagic, 4) != 0) throw DataError("bad magic at byte offset 0");
    const auto version = reader.get<std::uint32_t>("version");
    if (version != kEvecVersion) {
        throw DataError("unsupported EVEC version " + std::to_string(version) + " at byte offset 4");
    }
    const auto dim = reader.get<std::uint32_t>("dim");
    if (dim == 0) throw DataError("EVEC dim is zero at byte offset 8");
    const auto count = reader.get<std::uint64_t>("count");
    const auto normalized = reader.get<std::uint8_t>("normalized flag");
    if (normalized > 1) throw DataError("bad normalized flag at byte offset 20");

    EmbeddingMatrix m(dim);
    // Cap the up-front reservation; a corrupt count must not allocate wildly.
    m.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    std::vector<float> row(dim);
    std::string id;
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto record_offset = reader.offset();
        const auto id_len = reader.get<std::uint16_t>("id length");
        id.assign(id_len, '\0');
        reader.bytes(id.data(), id_len, "id");
        reader.bytes(reinterpret_cast<char*>(row.data()), row.size() * sizeof(float), "vector");
        try {
            m.add(id, row);
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + " (record at byte offset " +
                            std::to_string(record_offset) + ")");
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw DataError("trailing bytes after " + std::to_string(count) +
                        " records at byte offset " + std::to_string(reader.offset()));
    }
    if (normalized) m.mark_normalized();
    return m;
}

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    AtomicFileWriter out(path, /*binary=*/true);
    write_evec(m, out.stream());
    out.commit();
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return read_evec(in);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace kbvqa
