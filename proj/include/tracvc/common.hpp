#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tracvc {

inline constexpr std::string_view kLibraryVersion = "0.3.0";

// Malformed input, bad flags, unreadable files. The CLI maps this to exit 2.
class InputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Failures while computing (degenerate gradients, undefined statistics...).
class ComputeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class SourceTag : std::uint8_t { kPre = 0, kPost = 1 };
enum class SetTag : std::uint8_t { kT = 0, kF = 1 };

std::string_view to_string(SourceTag s);
std::string_view to_string(SetTag s);
SourceTag parse_source_tag(std::string_view s);
SetTag parse_set_tag(std::string_view s);

// Shortest decimal representation that round-trips. Used for every float we
// write so that run artifacts are byte-stable.
std::string format_real(double v);

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Portable seeded RNG. std::mt19937_64 has a standardized output sequence;
// the distribution helpers below avoid the implementation-defined std::
// distributions so results match across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

  private:
    std::mt19937_64 engine_;
};

// Little-endian binary encoding shared by the index and checkpoint files.
class BinaryWriter {
  public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void str(std::string_view s);
    void raw(std::string_view s) { buf_.append(s); }
    const std::string& bytes() const { return buf_; }

  private:
    std::string buf_;
};

class BinaryReader {
  public:
    BinaryReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    std::string_view raw(std::size_t n);
    bool at_end() const { return pos_ == data_.size(); }

  private:
    std::string_view data_;
    std::size_t pos_ = 0;
    std::string what_;
};

// Reads a whole file; throws InputError when unreadable.
std::string read_file(const std::string& path);

// Writes via a temporary sibling then renames, so readers never observe a
// half-written file.
void write_file_atomic(const std::string& path, std::string_view contents);

}  // namespace tracvc
