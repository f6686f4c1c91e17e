#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "memcap/codecs.hpp"

namespace memcap {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string shell_quote(const std::string& path) {
  std::string out = "'";
  for (char c : path) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

}  // namespace

std::vector<ExternalCodec> parse_external_codecs(std::string_view spec) {
  std::vector<ExternalCodec> out;
  while (!spec.empty()) {
    const auto semi = spec.find(';');
    const auto item = spec.substr(0, semi);
    spec = semi == std::string_view::npos ? std::string_view{} : spec.substr(semi + 1);
    if (trim(item).empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw ConfigError("external codecs: expected name=command, got '" + trim(item) + "'");
    ExternalCodec c{trim(item.substr(0, eq)), trim(item.substr(eq + 1))};
    if (c.name.empty() || c.command.empty()) throw ConfigError("external codecs: empty name or command");
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ExternalCodec> default_external_codecs() {
  if (const char* env = std::getenv("MEMCAP_EXTERNAL_CODECS")) return parse_external_codecs(env);
  return {{"zlib", "gzip -9 -c -n"}, {"bz2", "bzip2 -9 -c"}, {"lzma", "xz -9 -c --format=raw"}};
}

std::optional<std::size_t> run_external_codec(const ExternalCodec& codec, std::string_view input) {
  static std::atomic<unsigned> counter{0};
  const auto dir = std::filesystem::temp_directory_path();
  const std::string stem = "memcap-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
  const auto in_path = dir / (stem + ".in");
  const auto out_path = dir / (stem + ".out");
  {
    std::ofstream f(in_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + in_path.string());
    f.write(input.data(), static_cast<std::streamsize>(input.size()));
  }
  const std::string cmd = "(" + codec.command + ") < " + shell_quote(in_path.string()) + " > " +
                          shell_quote(out_path.string()) + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  std::error_code ec;
  std::filesystem::remove(in_path, ec);
  const int code = status == -1 ? -1 : (WIFEXITED(status) ? WEXITSTATUS(status) : -1);
  if (code == 127) {
    std::filesystem::remove(out_path, ec);
    return std::nullopt;
  }
  if (code != 0) {
    std::filesystem::remove(out_path, ec);
    throw IoError("external codec '" + codec.name + "' failed with status " + std::to_string(code));
  }
  const auto size = std::filesystem::file_size(out_path);
  std::filesystem::remove(out_path, ec);
  return static_cast<std::size_t>(size);
}

}  // namespace memcap
