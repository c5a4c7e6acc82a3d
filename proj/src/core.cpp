#include "nascore/core.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iterator>
#include <sstream>

namespace nascore {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kNonFiniteInput: return "non-finite-input";
    case ErrorCode::kUnknownKind: return "unknown-kind";
    case ErrorCode::kNonScalarLoss: return "called-on-non-scalar";
    case ErrorCode::kEmptyGraph: return "called-with-empty-graph";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kPairingInfeasible: return "pairing-infeasible";
    case ErrorCode::kInvalidGeometry: return "invalid-geometry";
    case ErrorCode::kIo: return "io-failure";
    case ErrorCode::kFormat: return "bad-format";
    case ErrorCode::kMalformedRow: return "malformed-row";
    case ErrorCode::kWrongColumnCount: return "wrong-column-count";
    case ErrorCode::kDuplicateVideo: return "duplicate-video-id";
    case ErrorCode::kEmptyResult: return "empty-result";
    case ErrorCode::kTooShortClip: return "too-short-clip";
    case ErrorCode::kIndexOutOfRange: return "index-out-of-range";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kStrideExceedsInput: return "stride-exceeds-input";
    case ErrorCode::kIndivisibleHeads: return "indivisible-heads";
    case ErrorCode::kGeometryMismatch: return "geometry-mismatch";
    case ErrorCode::kClassOutOfRange: return "class-out-of-range";
    case ErrorCode::kNonFiniteGradient: return "non-finite-gradient";
    case ErrorCode::kEmptySet: return "empty-set";
    case ErrorCode::kDegenerate: return "all-classes-degenerate";
    case ErrorCode::kIncompatibleRuns: return "incompatible-runs";
  }
  return "unknown-error";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(splitmix64(base) ^ (salt * 0xd1342543de82ef95ULL + 1));
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view salt) {
  // FNV-1a over the salt, then mixed with the base.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : salt) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(base, h);
}

std::uint64_t Rng::next() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Scalar Rng::uniform() { return static_cast<Scalar>(next() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "Rng::below(0)");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % n;
}

std::int64_t Rng::between(std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << content;
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path);
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_text_file(path)); }

std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": expected key=value");
    }
    auto key = trim(line.substr(0, eq));
    if (!out.emplace(key, trim(line.substr(eq + 1))).second) {
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    }
  }
  return out;
}

}  // namespace nascore
