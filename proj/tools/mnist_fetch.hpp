#pragma once

// Downloads the gzip'd IDX files of the MNIST training set into a cache
// directory and checks that they decode.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <httplib.h>

#include "biodyn/dataio.hpp"
#include "biodyn/error.hpp"

namespace biodyn::fetch {

inline constexpr const char* kDefaultBaseUrl = "https://storage.googleapis.com/cvdf-datasets/mnist/";

// "https://host[:port]/path/" -> ("https://host[:port]", "/path/")
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  require(scheme != std::string::npos, ErrorClass::Config, "base URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline void download(const std::string& base_url, const std::string& name, const std::filesystem::path& dest) {
  auto [host, path] = split_url(base_url);
  if (path.back() != '/') path += '/';
  httplib::Client cli(host);
  cli.set_follow_location(true);
  cli.set_connection_timeout(20);
  cli.set_read_timeout(120);
  auto res = cli.Get(path + name);
  if (!res) throw Error(ErrorClass::Io, "download of " + name + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorClass::Io, "download of " + name + " failed: HTTP " + std::to_string(res->status));
  const auto tmp = dest.string() + ".part";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), ErrorClass::Io, "cannot write " + tmp);
    out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    require(out.good(), ErrorClass::Io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, dest);
}

/// Fetches `<prefix>-images-idx3-ubyte.gz` and `<prefix>-labels-idx1-ubyte.gz`
/// unless already present, then loads them once as a check.
inline Dataset fetch_mnist(const std::filesystem::path& dir, const std::string& base_url = kDefaultBaseUrl,
                           const std::string& prefix = "train", bool force = false) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorClass::Io, "cannot create " + dir.string());
  for (const char* kind : {"-images-idx3-ubyte.gz", "-labels-idx1-ubyte.gz"}) {
    const std::string name = prefix + kind;
    if (force || !std::filesystem::exists(dir / name)) download(base_url, name, dir / name);
  }
  return load_mnist_dir(dir, prefix);
}

}  // namespace biodyn::fetch
