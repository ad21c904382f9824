#include "bigsel/matstore.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include "bigsel/counters.hpp"
#include "bigsel/serialize.hpp"

namespace bigsel {

namespace {

std::string errno_text() { return std::strerror(errno); }

void encode_header(const MatrixHeader& h, std::uint8_t out[kMatrixHeaderBytes]) {
    std::memset(out, 0, kMatrixHeaderBytes);
    std::memcpy(out, kMatrixMagic, 8);
    for (int i = 0; i < 4; ++i) out[8 + i] = static_cast<std::uint8_t>(h.version >> (8 * i));
    for (int i = 0; i < 8; ++i) out[16 + i] = static_cast<std::uint8_t>(h.n_rows >> (8 * i));
    for (int i = 0; i < 8; ++i) out[24 + i] = static_cast<std::uint8_t>(h.n_cols >> (8 * i));
    out[32] = h.layout;
    out[33] = h.dtype;
}

MatrixHeader decode_header(const std::uint8_t in[kMatrixHeaderBytes],
                           const std::filesystem::path& path) {
    if (std::memcmp(in, kMatrixMagic, 8) != 0)
        throw FormatError("not a matrix file (bad magic): " + path.string());
    MatrixHeader h;
    h.version = 0;
    for (int i = 0; i < 4; ++i) h.version |= static_cast<std::uint32_t>(in[8 + i]) << (8 * i);
    if (h.version != kMatrixFormatVersion)
        throw FormatError("unsupported matrix format version " +
                          std::to_string(h.version) + ": " + path.string());
    h.n_rows = h.n_cols = 0;
    for (int i = 0; i < 8; ++i) h.n_rows |= static_cast<std::uint64_t>(in[16 + i]) << (8 * i);
    for (int i = 0; i < 8; ++i) h.n_cols |= static_cast<std::uint64_t>(in[24 + i]) << (8 * i);
    h.layout = in[32];
    h.dtype = in[33];
    if (h.layout != 0) throw FormatError("unknown layout byte: " + path.string());
    if (h.dtype != 0) throw FormatError("unknown dtype byte: " + path.string());
    if (h.n_rows < 1 || h.n_cols < 1)
        throw FormatError("degenerate dimensions in header: " + path.string());
    return h;
}

std::size_t payload_bytes(std::size_t n_rows, std::size_t n_cols) {
    return sizeof(double) * n_rows * n_cols;
}

}  // namespace

double ColumnSource::get(std::size_t i, std::size_t j) const {
    if (j >= cols())
        throw IndexError("column index " + std::to_string(j) + " out of range [0, " +
                         std::to_string(cols()) + ")");
    if (i >= rows())
        throw IndexError("row index " + std::to_string(i) + " out of range [0, " +
                         std::to_string(rows()) + ")");
    return column(j)[i];
}

void MutableColumns::set(std::size_t i, std::size_t j, double v) {
    if (j >= cols())
        throw IndexError("column index " + std::to_string(j) + " out of range [0, " +
                         std::to_string(cols()) + ")");
    if (i >= rows())
        throw IndexError("row index " + std::to_string(i) + " out of range [0, " +
                         std::to_string(rows()) + ")");
    column_mut(j)[i] = v;
}

StoredMatrix StoredMatrix::create(const std::filesystem::path& path,
                                  std::size_t n_rows, std::size_t n_cols,
                                  bool overwrite) {
    if (n_rows < 1 || n_cols < 1)
        throw ArgumentError("matrix dimensions must be at least 1x1, got " +
                            std::to_string(n_rows) + "x" + std::to_string(n_cols));
    if (!overwrite && std::filesystem::exists(path))
        throw StorageError("refusing to overwrite existing file " + path.string() +
                           " (pass overwrite to replace)");

    const std::size_t total = kMatrixHeaderBytes + payload_bytes(n_rows, n_cols);

    struct statvfs vfs {};
    const auto dir = path.has_parent_path() ? path.parent_path()
                                            : std::filesystem::path(".");
    if (statvfs(dir.c_str(), &vfs) == 0) {
        const std::uint64_t avail =
            static_cast<std::uint64_t>(vfs.f_bavail) * vfs.f_frsize;
        if (avail < total)
            throw StorageError("insufficient disk space for " + path.string() + ": need " +
                               std::to_string(total) + " bytes, " +
                               std::to_string(avail) + " available");
    }

    int flags = O_RDWR | O_CREAT | (overwrite ? O_TRUNC : O_EXCL);
    int fd = ::open(path.c_str(), flags, 0644);
    if (fd < 0)
        throw StorageError("cannot create " + path.string() + ": " + errno_text());
    if (::ftruncate(fd, static_cast<off_t>(total)) != 0) {
        const std::string reason = errno_text();
        ::close(fd);
        ::unlink(path.c_str());
        throw StorageError("cannot size " + path.string() + ": " + reason);
    }

    StoredMatrix m;
    m.header_ = MatrixHeader{kMatrixFormatVersion, n_rows, n_cols, 0, 0};
    m.path_ = path;
    m.mode_ = AccessMode::ReadWrite;
    m.fd_ = fd;
    try {
        m.map_file(true);
    } catch (...) {
        ::close(fd);
        ::unlink(path.c_str());
        throw;
    }

    std::uint8_t raw[kMatrixHeaderBytes];
    encode_header(m.header_, raw);
    std::memcpy(m.map_, raw, kMatrixHeaderBytes);
    counters::count_disk(total);
    return m;
}

StoredMatrix StoredMatrix::open(const std::filesystem::path& path, AccessMode mode) {
    int fd = ::open(path.c_str(), mode == AccessMode::ReadOnly ? O_RDONLY : O_RDWR);
    if (fd < 0)
        throw StorageError("cannot open " + path.string() + ": " + errno_text());

    std::uint8_t raw[kMatrixHeaderBytes];
    ssize_t got = ::pread(fd, raw, kMatrixHeaderBytes, 0);
    if (got != static_cast<ssize_t>(kMatrixHeaderBytes)) {
        ::close(fd);
        throw FormatError("file too short for header: " + path.string());
    }

    MatrixHeader h;
    try {
        h = decode_header(raw, path);
    } catch (...) {
        ::close(fd);
        throw;
    }

    struct stat st {};
    ::fstat(fd, &st);
    const std::size_t expect = kMatrixHeaderBytes + payload_bytes(h.n_rows, h.n_cols);
    if (static_cast<std::size_t>(st.st_size) != expect) {
        ::close(fd);
        throw FormatError("file length (" + std::to_string(st.st_size) +
                          ") does not match header dims for " + path.string() +
                          " (expected " + std::to_string(expect) + ")");
    }

    StoredMatrix m;
    m.header_ = h;
    m.path_ = path;
    m.mode_ = mode;
    m.fd_ = fd;
    try {
        m.map_file(mode == AccessMode::ReadWrite);
    } catch (...) {
        ::close(fd);
        throw;
    }
    return m;
}

StoredMatrix::StoredMatrix(StoredMatrix&& other) noexcept { *this = std::move(other); }

StoredMatrix& StoredMatrix::operator=(StoredMatrix&& other) noexcept {
    if (this != &other) {
        unmap();
        header_ = other.header_;
        path_ = std::move(other.path_);
        mode_ = other.mode_;
        fd_ = std::exchange(other.fd_, -1);
        map_ = std::exchange(other.map_, nullptr);
        map_len_ = std::exchange(other.map_len_, 0);
    }
    return *this;
}

StoredMatrix::~StoredMatrix() { unmap(); }

void StoredMatrix::map_file(bool writable) {
    map_len_ = kMatrixHeaderBytes + payload_bytes(header_.n_rows, header_.n_cols);
    const int prot = writable ? (PROT_READ | PROT_WRITE) : PROT_READ;
    void* p = ::mmap(nullptr, map_len_, prot, MAP_SHARED, fd_, 0);
    if (p == MAP_FAILED) {
        map_ = nullptr;
        map_len_ = 0;
        throw StorageError("mmap failed for " + path_.string() + ": " + errno_text());
    }
    map_ = p;
}

void StoredMatrix::unmap() noexcept {
    if (map_ != nullptr) {
        ::munmap(map_, map_len_);
        map_ = nullptr;
    }
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

const double* StoredMatrix::column(std::size_t j) const {
    if (j >= header_.n_cols)
        throw IndexError("column index " + std::to_string(j) + " out of range [0, " +
                         std::to_string(header_.n_cols) + ") in " + path_.string());
    return payload() + j * header_.n_rows;
}

double* StoredMatrix::column_mut(std::size_t j) {
    if (mode_ != AccessMode::ReadWrite)
        throw ModeError("write access to read-only matrix " + path_.string());
    return const_cast<double*>(column(j));
}

void StoredMatrix::flush() {
    if (mode_ != AccessMode::ReadWrite || map_ == nullptr) return;
    if (::msync(map_, map_len_, MS_SYNC) != 0)
        throw StorageError("msync failed for " + path_.string() + ": " + errno_text());
}

void StoredMatrix::read_column(std::size_t j, std::span<double> out) const {
    if (out.size() != header_.n_rows)
        throw ArgumentError("read_column buffer length " + std::to_string(out.size()) +
                            " != n_rows " + std::to_string(header_.n_rows));
    std::memcpy(out.data(), column(j), sizeof(double) * header_.n_rows);
}

BlockView::BlockView(MutableColumns& base, std::size_t col0, std::size_t n_cols)
    : base_(&base), col0_(col0), n_cols_(n_cols) {
    if (col0 + n_cols > base.cols())
        throw ArgumentError("block view [" + std::to_string(col0) + ", " +
                            std::to_string(col0 + n_cols) + ") exceeds matrix width " +
                            std::to_string(base.cols()));
}

const double* BlockView::column(std::size_t j) const {
    if (j >= n_cols_)
        throw IndexError("block column index " + std::to_string(j) + " out of range");
    return base_->column(col0_ + j);
}

double* BlockView::column_mut(std::size_t j) {
    if (j >= n_cols_)
        throw IndexError("block column index " + std::to_string(j) + " out of range");
    return base_->column_mut(col0_ + j);
}

AugmentedMatrix::AugmentedMatrix(const ColumnSource& left, MutableColumns& right)
    : left_(&left), right_(&right) {
    if (left.rows() != right.rows())
        throw ArgumentError("augmented view row mismatch: " + std::to_string(left.rows()) +
                            " vs " + std::to_string(right.rows()));
}

const double* AugmentedMatrix::column(std::size_t j) const {
    const std::size_t p = left_->cols();
    if (j < p) return left_->column(j);
    if (j < p + right_->cols()) return right_->column(j - p);
    throw IndexError("column index " + std::to_string(j) + " out of range [0, " +
                     std::to_string(cols()) + ") in augmented view");
}

DenseColumns::DenseColumns(std::size_t n_rows, std::size_t n_cols)
    : n_rows_(n_rows), n_cols_(n_cols), data_(n_rows * n_cols, 0.0) {
    if (n_rows < 1 || n_cols < 1)
        throw ArgumentError("matrix dimensions must be at least 1x1");
    counters::count_alloc(data_.size() * sizeof(double));
}

const double* DenseColumns::column(std::size_t j) const {
    if (j >= n_cols_)
        throw IndexError("column index " + std::to_string(j) + " out of range [0, " +
                         std::to_string(n_cols_) + ")");
    return data_.data() + j * n_rows_;
}

double* DenseColumns::column_mut(std::size_t j) {
    return const_cast<double*>(column(j));
}

std::vector<ColumnStats> standardize_columns(MutableColumns& m,
                                             std::size_t col_begin,
                                             std::size_t col_end) {
    if (col_end > m.cols() || col_begin > col_end)
        throw ArgumentError("column range [" + std::to_string(col_begin) + ", " +
                            std::to_string(col_end) + ") invalid for width " +
                            std::to_string(m.cols()));
    const std::size_t n = m.rows();
    if (n < 2) throw ArgumentError("standardization needs at least 2 rows");

    std::vector<ColumnStats> stats;
    stats.reserve(col_end - col_begin);
    for (std::size_t j = col_begin; j < col_end; ++j) {
        double* col = m.column_mut(j);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += col[i];
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = col[i] - mean;
            ss += d * d;
        }
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        if (sd < 1e-12)
            throw DegenerateColumn(j, "column " + std::to_string(j) +
                                          " is constant (sd < 1e-12)");
        const double inv = 1.0 / sd;
        for (std::size_t i = 0; i < n; ++i) col[i] = (col[i] - mean) * inv;
        stats.push_back(ColumnStats{mean, sd});
    }
    return stats;
}

namespace {

bool parse_double(std::string_view field, double& out) {
    const char* begin = field.data();
    const char* end = begin + field.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end != begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r')) --end;
    if (begin == end) return false;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_fields(const std::string& line,
                                           std::vector<std::string_view>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.emplace_back(line.data() + start, line.size() - start);
            break;
        }
        out.emplace_back(line.data() + start, comma - start);
        start = comma + 1;
    }
    return out;
}

}  // namespace

StoredMatrix import_csv(const std::filesystem::path& csv_path,
                        const std::filesystem::path& out_path, bool overwrite) {
    std::ifstream in(csv_path);
    if (!in) throw StorageError("cannot open CSV " + csv_path.string());

    std::vector<std::vector<double>> row_data;  // row-major staging
    std::string line;
    std::vector<std::string_view> fields;
    std::size_t n_cols = 0;
    bool first_line = true;

    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        split_fields(line, fields);
        double probe = 0.0;
        if (first_line && !parse_double(fields[0], probe)) {
            first_line = false;  // header row, skip
            continue;
        }
        first_line = false;
        std::vector<double> row(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j) {
            if (!parse_double(fields[j], row[j]))
                throw FormatError("non-numeric CSV field '" + std::string(fields[j]) +
                                  "' at data row " + std::to_string(row_data.size()) +
                                  " of " + csv_path.string());
        }
        if (n_cols == 0) {
            n_cols = row.size();
        } else if (row.size() != n_cols) {
            throw FormatError("ragged CSV: row " + std::to_string(row_data.size()) +
                              " has " + std::to_string(row.size()) + " fields, expected " +
                              std::to_string(n_cols));
        }
        row_data.push_back(std::move(row));
    }
    if (row_data.empty() || n_cols == 0)
        throw FormatError("CSV has no numeric data: " + csv_path.string());

    StoredMatrix m = StoredMatrix::create(out_path, row_data.size(), n_cols, overwrite);
    for (std::size_t j = 0; j < n_cols; ++j) {
        double* col = m.column_mut(j);
        for (std::size_t i = 0; i < row_data.size(); ++i) col[i] = row_data[i][j];
    }
    m.flush();
    return m;
}

std::vector<double> read_csv_vector(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open " + path.string());
    std::vector<double> values;
    std::string line;
    std::vector<std::string_view> fields;
    bool first_line = true;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        split_fields(line, fields);
        if (fields.size() != 1)
            throw FormatError("expected a single column in " + path.string());
        double v = 0.0;
        if (!parse_double(fields[0], v)) {
            if (first_line) {
                first_line = false;
                continue;
            }
            throw FormatError("non-numeric value '" + line + "' in " + path.string());
        }
        first_line = false;
        values.push_back(v);
    }
    if (values.empty()) throw FormatError("no numeric values in " + path.string());
    return values;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw StorageError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
    counters::count_disk(bytes.size());
}

}  // namespace bigsel
