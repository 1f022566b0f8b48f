/* Copyright 2026 The Handpress Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include "handpress/core.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <thread>

namespace handpress {

namespace {
constexpr char kRawMagic[4] = {'H', 'P', 'R', 'W'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
}  // namespace

void write_raw(const std::string& path, const ImageF& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write_raw: cannot open " + path);
  os.write(kRawMagic, 4);
  put_u32(os, static_cast<uint32_t>(img.width()));
  put_u32(os, static_cast<uint32_t>(img.height()));
  put_u32(os, static_cast<uint32_t>(img.channels()));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(img.data()),
           static_cast<std::streamsize>(img.size() * sizeof(float)));
  if (!os) throw DataError("write_raw: short write to " + path);
}

ImageF read_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("read_raw: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kRawMagic, 4) != 0)
    throw DataError("read_raw: bad magic in " + path);
  const uint32_t w = get_u32(is), h = get_u32(is), c = get_u32(is);
  if (!is || c < 1 || w > (1u << 20) || h > (1u << 20) || c > 64)
    throw DataError("read_raw: bad header in " + path);
  ImageF img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  is.read(reinterpret_cast<char*>(img.data()),
          static_cast<std::streamsize>(img.size() * sizeof(float)));
  if (static_cast<size_t>(is.gcount()) != img.size() * sizeof(float))
    throw DataError("read_raw: truncated file " + path);
  return img;
}

namespace {
std::atomic<int> g_threads{0};  // 0 = use hardware concurrency
}

void set_thread_count(int n) { g_threads.store(n < 0 ? 0 : n); }

int thread_count() {
  int n = g_threads.load();
  if (n == 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body,
                  int64_t grain) {
  if (n <= 0) return;
  if (grain < 1) grain = 1;
  const int64_t chunks = (n + grain - 1) / grain;
  const int workers = static_cast<int>(std::min<int64_t>(thread_count(), chunks));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::atomic<int64_t> next{0};
  auto run = [&]() {
    for (;;) {
      const int64_t c = next.fetch_add(1);
      if (c >= chunks) break;
      const int64_t lo = c * grain;
      body(lo, std::min(n, lo + grain));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 1; i < workers; ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace handpress
