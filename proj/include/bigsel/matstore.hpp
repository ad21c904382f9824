#ifndef BIGSEL_MATSTORE_HPP
#define BIGSEL_MATSTORE_HPP

// File-backed double-precision matrix storage. Matrices live on disk in a
// fixed little-endian format (64-byte header + column-major float64 payload)
// and are accessed through a memory mapping, so data far larger than RAM can
// be read element- or column-wise on demand.
//
// File format, version 1 (all integers little-endian):
//   offset  0: magic "BIGSELFM" (8 bytes)
//   offset  8: version   u32
//   offset 16: n_rows    u64
//   offset 24: n_cols    u64
//   offset 32: layout    u8   (0 = column-major)
//   offset 33: dtype     u8   (0 = float64)
//   offset 34..63: zero padding
//   offset 64: payload, n_rows * n_cols float64, column-major
//
// Concurrency contract (documented, not enforced): any number of readers may
// share a read-only file; a file region has at most one writer at a time.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bigsel/errors.hpp"

namespace bigsel {

inline constexpr char kMatrixMagic[9] = "BIGSELFM";
inline constexpr std::uint32_t kMatrixFormatVersion = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 64;

struct MatrixHeader {
    std::uint32_t version = kMatrixFormatVersion;
    std::uint64_t n_rows = 0;
    std::uint64_t n_cols = 0;
    std::uint8_t layout = 0;  // column-major
    std::uint8_t dtype = 0;   // float64
};

enum class AccessMode { ReadOnly, ReadWrite };

// Read-side column access. Columns are contiguous runs of `rows()` doubles;
// the returned pointer stays valid for the lifetime of the source.
class ColumnSource {
public:
    virtual ~ColumnSource() = default;
    virtual std::size_t rows() const = 0;
    virtual std::size_t cols() const = 0;
    virtual const double* column(std::size_t j) const = 0;

    double get(std::size_t i, std::size_t j) const;
};

// Write-side extension. column_mut() on a read-only backing throws ModeError.
class MutableColumns : public ColumnSource {
public:
    virtual double* column_mut(std::size_t j) = 0;
    // Durability point: data is guaranteed on stable storage only after
    // flush() returns. Writes may be batched arbitrarily before that.
    virtual void flush() {}

    void set(std::size_t i, std::size_t j, double v);
};

class StoredMatrix final : public MutableColumns {
public:
    // Creates a zero-initialized file of exactly 64 + 8*n_rows*n_cols bytes.
    // Refuses to replace an existing file unless `overwrite` is set, and
    // refuses when the filesystem lacks room for the payload.
    static StoredMatrix create(const std::filesystem::path& path,
                               std::size_t n_rows, std::size_t n_cols,
                               bool overwrite = false);
    static StoredMatrix open(const std::filesystem::path& path, AccessMode mode);

    StoredMatrix(StoredMatrix&& other) noexcept;
    StoredMatrix& operator=(StoredMatrix&& other) noexcept;
    StoredMatrix(const StoredMatrix&) = delete;
    StoredMatrix& operator=(const StoredMatrix&) = delete;
    ~StoredMatrix() override;

    std::size_t rows() const override { return header_.n_rows; }
    std::size_t cols() const override { return header_.n_cols; }
    const double* column(std::size_t j) const override;
    double* column_mut(std::size_t j) override;
    void flush() override;

    // Copies column j into `out` (length n_rows). Never allocates.
    void read_column(std::size_t j, std::span<double> out) const;

    AccessMode mode() const { return mode_; }
    const MatrixHeader& header() const { return header_; }
    const std::filesystem::path& path() const { return path_; }

private:
    StoredMatrix() = default;
    void map_file(bool writable);
    void unmap() noexcept;
    const double* payload() const {
        return reinterpret_cast<const double*>(
            static_cast<const char*>(map_) + kMatrixHeaderBytes);
    }

    MatrixHeader header_;
    std::filesystem::path path_;
    AccessMode mode_ = AccessMode::ReadOnly;
    int fd_ = -1;
    void* map_ = nullptr;
    std::size_t map_len_ = 0;
};

// Writable view of a contiguous column range [col0, col0 + n_cols) of a
// backing matrix. Used for the dummy block of an enlarged matrix.
class BlockView final : public MutableColumns {
public:
    BlockView(MutableColumns& base, std::size_t col0, std::size_t n_cols);

    std::size_t rows() const override { return base_->rows(); }
    std::size_t cols() const override { return n_cols_; }
    const double* column(std::size_t j) const override;
    double* column_mut(std::size_t j) override;
    void flush() override { base_->flush(); }

    std::size_t first_column() const { return col0_; }

private:
    MutableColumns* base_;
    std::size_t col0_;
    std::size_t n_cols_;
};

// Composed view [X | dummy block] of logical width p + L. Column j < p reads
// the left (original) matrix; j >= p reads column j - p of the dummy block.
// The left matrix is never written through this view.
class AugmentedMatrix final : public ColumnSource {
public:
    AugmentedMatrix(const ColumnSource& left, MutableColumns& right);

    std::size_t rows() const override { return left_->rows(); }
    std::size_t cols() const override { return left_->cols() + right_->cols(); }
    const double* column(std::size_t j) const override;

    std::size_t left_cols() const { return left_->cols(); }
    MutableColumns& dummy_block() { return *right_; }
    const MutableColumns& dummy_block() const { return *right_; }

private:
    const ColumnSource* left_;
    MutableColumns* right_;
};

// Heap-resident column-major matrix with the same access interface as the
// stored form. Used by the dense in-memory reference pipeline and as scratch
// for statistical checks; its allocation feeds the RAM accounting counters.
class DenseColumns final : public MutableColumns {
public:
    DenseColumns(std::size_t n_rows, std::size_t n_cols);

    std::size_t rows() const override { return n_rows_; }
    std::size_t cols() const override { return n_cols_; }
    const double* column(std::size_t j) const override;
    double* column_mut(std::size_t j) override;

private:
    std::size_t n_rows_;
    std::size_t n_cols_;
    std::vector<double> data_;
};

struct ColumnStats {
    double mean = 0.0;
    double sd = 0.0;
};

// Centers and scales columns [col_begin, col_end) to mean 0 and unit sample
// variance (divisor n-1). Returns the original (mean, sd) per column for
// provenance. A column with sd < 1e-12 raises DegenerateColumn.
std::vector<ColumnStats> standardize_columns(MutableColumns& m,
                                             std::size_t col_begin,
                                             std::size_t col_end);
inline std::vector<ColumnStats> standardize_columns(MutableColumns& m) {
    return standardize_columns(m, 0, m.cols());
}

// Dense numeric CSV (rows = samples) -> matrix file. A leading header row is
// detected and skipped when its first field does not parse as a number.
StoredMatrix import_csv(const std::filesystem::path& csv_path,
                        const std::filesystem::path& out_path,
                        bool overwrite = false);

// Single-column numeric CSV (or one value per line) -> vector.
std::vector<double> read_csv_vector(const std::filesystem::path& path);

}  // namespace bigsel

#endif
