// Copyright 2026 The kbvqa Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kbvqa {

/// Tolerance on |norm - 1| for rows that claim to be unit length.
inline constexpr float kUnitNormTolerance = 1e-4f;

/// Row-major float32 matrix whose rows are keyed by unique string ids.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    explicit EmbeddingMatrix(std::size_t dim);

    /// Appends a row. Throws DataError on a duplicate id or a size mismatch.
    void add(std::string id, std::span<const float> vector);
    void reserve(std::size_t rows);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    bool normalized() const { return normalized_; }

    const std::vector<std::string>& ids() const { return ids_; }
    const std::string& id(std::size_t row) const { return ids_[row]; }
    std::span<const float> row(std::size_t i) const {
        return {values_.data() + i * dim_, dim_};
    }
    const std::vector<float>& values() const { return values_; }

    std::optional<std::size_t> find(std::string_view id) const;
    std::span<const float> at(std::string_view id) const;

    /// Marks the matrix normalized after checking every row is unit length.
    void mark_normalized();

    bool operator==(const EmbeddingMatrix& other) const;

private:
    friend EmbeddingMatrix normalize(const EmbeddingMatrix&);

    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> values_;
    std::unordered_map<std::string, std::size_t> index_;
    bool normalized_ = false;
};

float l2_norm(std::span<const float> v);
/// Sequential float32 dot product (fixed summation order).
float dot(std::span<const float> a, std::span<const float> b);
bool is_unit(std::span<const float> v, float tolerance = kUnitNormTolerance);

/// Unit-normalizes every row; idempotent. Throws DataError naming the first
/// zero-norm row.
EmbeddingMatrix normalize(const EmbeddingMatrix& m);
std::vector<float> normalized_copy(std::span<const float> v);

// EVEC binary format, little-endian:
//   "EVEC" | u32 version=1 | u32 dim | u64 count | u8 normalized |
//   count * (u16 id_len | id bytes | dim * f32)
inline constexpr char kEvecMagic[4] = {'E', 'V', 'E', 'C'};
inline constexpr std::uint32_t kEvecVersion = 1;

void write_evec(const EmbeddingMatrix& m, std::ostream& out);
EmbeddingMatrix read_evec(std::istream& in);

void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

}  // namespace kbvqa
