// Copyright 2026 The deskstack Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DESKSTACK_SRC_BINARY_IO_HPP
#define DESKSTACK_SRC_BINARY_IO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "deskstack/common.hpp"

namespace desk::binio {

// Explicit little-endian primitives so the on-disk formats are bit-exact
// regardless of host.

class Writer {
  public:
    explicit Writer(const std::string& path) : f_(path, std::ios::binary) {
        if (!f_) throw RuntimeFailure("cannot open " + path + " for writing");
    }

    void bytes(const void* data, std::size_t n) {
        f_.write(static_cast<const char*>(data),
                 static_cast<std::streamsize>(n));
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u16(std::uint16_t v) {
        const std::uint8_t b[2] = {static_cast<std::uint8_t>(v),
                                   static_cast<std::uint8_t>(v >> 8)};
        bytes(b, 2);
    }
    void u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(b, 4);
    }
    void u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(b, 8);
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void close() {
        f_.close();
        if (!f_) throw RuntimeFailure("write failed while closing file");
    }

  private:
    std::ofstream f_;
};

class Reader {
  public:
    explicit Reader(const std::string& path)
        : path_(path), f_(path, std::ios::binary) {
        if (!f_) throw ValidationError("cannot open " + path);
    }

    void bytes(void* out, std::size_t n) {
        f_.read(static_cast<char*>(out), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(f_.gcount()) != n) {
            throw ValidationError("truncated file " + path_ + " at byte offset " +
                                  std::to_string(offset_ +
                                                 static_cast<std::size_t>(
                                                     f_.gcount())));
        }
        offset_ += n;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint16_t u16() {
        std::uint8_t b[2];
        bytes(b, 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        std::uint8_t b[4];
        bytes(b, 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    std::uint64_t u64() {
        std::uint8_t b[8];
        bytes(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    bool at_eof() {
        f_.peek();
        return f_.eof();
    }
    std::size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

  private:
    std::string path_;
    std::ifstream f_;
    std::size_t offset_ = 0;
};

}  // namespace desk::binio

#endif  // DESKSTACK_SRC_BINARY_IO_HPP
