#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>

namespace skyfall {

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::span<const std::uint8_t> bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

/// Incremental hashing for data spread over several buffers.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const std::uint8_t> bytes);
    void update(const std::string& text);
    template <class T>
    void update_pod(const T& value) {
        update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(&value), sizeof(T)));
    }
    Sha256Digest finish();

private:
    void* ctx_;
};

} // namespace skyfall
