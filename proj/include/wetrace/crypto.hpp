#pragma once

// Key material and hybrid encryption.
//
// Every device holds a single 32-byte master seed and derives one X25519
// key pair per rotation window with HKDF-SHA256 keyed by the window index.
// Notifications are sealed per recipient in an ephemeral-static pattern:
//
//   wire layout: ephemeral_pk (32) || body (len(plaintext)) || tag (16)
//
// so ciphertext length is always plaintext length + 48. Decryption with a
// non-matching key fails the AEAD tag and reports "not for me" rather than
// an error. Prefix tags are the first n bits of SHA-256(public key), used
// to skip decryptions that are guaranteed to fail.

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <sodium.h>

#include "wetrace/bytes.hpp"
#include "wetrace/rng.hpp"

namespace wetrace {

using PublicKey = std::array<uint8_t, 32>;

inline constexpr size_t kPublicKeyBytes = 32;
inline constexpr size_t kAuthTagBytes = 16;
inline constexpr size_t kCiphertextOverhead = 48;  // ephemeral pk + tag
inline constexpr size_t kMaxPlaintextBytes = 64 * 1024;

struct MasterSeed {
    std::array<uint8_t, 32> bytes{};

    static MasterSeed generate(RandomSource& rng = system_random()) {
        MasterSeed seed;
        rng.fill(seed.bytes.data(), seed.bytes.size());
        return seed;
    }

    static MasterSeed from_hex(std::string_view hex) {
        return MasterSeed{array_from_hex<32>(hex)};
    }

    bool operator==(const MasterSeed&) const = default;
};

struct WindowKeyPair {
    uint64_t window_index = 0;
    PublicKey public_key{};
    std::array<uint8_t, 32> secret_key{};

    bool operator==(const WindowKeyPair&) const = default;
};

inline std::array<uint8_t, 32> sha256(std::span<const uint8_t> data) {
    ensure_sodium_init();
    std::array<uint8_t, 32> digest{};
    crypto_hash_sha256(digest.data(), data.data(), data.size());
    return digest;
}

// HKDF-SHA256 (extract-and-expand) on top of libsodium's HMAC primitive.
namespace detail {

inline std::array<uint8_t, 32> hmac_sha256(std::span<const uint8_t> key,
                                           std::span<const uint8_t> data) {
    std::array<uint8_t, 32> mac{};
    crypto_auth_hmacsha256_state st;
    crypto_auth_hmacsha256_init(&st, key.data(), key.size());
    crypto_auth_hmacsha256_update(&st, data.data(), data.size());
    crypto_auth_hmacsha256_final(&st, mac.data());
    return mac;
}

inline Bytes hkdf_sha256(std::span<const uint8_t> ikm,
                         std::span<const uint8_t> salt,
                         std::span<const uint8_t> info, size_t out_len) {
    ensure_sodium_init();
    const auto prk = hmac_sha256(salt, ikm);
    Bytes out;
    out.reserve(out_len);
    Bytes block;
    uint8_t counter = 1;
    while (out.size() < out_len) {
        Bytes input = block;
        input.insert(input.end(), info.begin(), info.end());
        input.push_back(counter++);
        const auto t = hmac_sha256(prk, input);
        block.assign(t.begin(), t.end());
        const size_t take = std::min(block.size(), out_len - out.size());
        out.insert(out.end(), block.begin(), block.begin() + take);
    }
    return out;
}

inline void clamp_scalar(std::array<uint8_t, 32>& scalar) {
    scalar[0] &= 248;
    scalar[31] &= 127;
    scalar[31] |= 64;
}

inline constexpr std::string_view kWindowKeySalt = "wetrace.window-key.v1";
inline constexpr std::string_view kBoxInfo = "wetrace.box.v1";

inline std::span<const uint8_t> as_bytes(std::string_view s) {
    return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}

}  // namespace detail

// Count of key-rotation windows since the epoch.
inline uint64_t window_index_for(int64_t timestamp, int64_t window_duration) {
    if (window_duration <= 0) {
        throw std::invalid_argument("window_duration must be positive");
    }
    if (timestamp < 0) {
        throw std::invalid_argument("timestamp must be non-negative");
    }
    return static_cast<uint64_t>(timestamp / window_duration);
}

// Pure function of (seed, window_index); repeated calls are bit-identical.
inline WindowKeyPair derive_window_keypair(const MasterSeed& seed,
                                           uint64_t window_index) {
    ensure_sodium_init();
    Bytes info;
    put_u64_le(info, window_index);
    const Bytes okm = detail::hkdf_sha256(
        seed.bytes, detail::as_bytes(detail::kWindowKeySalt), info, 32);

    WindowKeyPair kp;
    kp.window_index = window_index;
    std::memcpy(kp.secret_key.data(), okm.data(), 32);
    detail::clamp_scalar(kp.secret_key);
    crypto_scalarmult_base(kp.public_key.data(), kp.secret_key.data());
    return kp;
}

// All key pairs a device may have advertised during the past horizon,
// oldest first, ending at the window containing `now`. The count is
// horizon / window_duration (clamped at the epoch).
inline std::vector<WindowKeyPair> derive_horizon_keypairs(
    const MasterSeed& seed, int64_t now, int64_t window_duration,
    int64_t contact_horizon) {
    const uint64_t current = window_index_for(now, window_duration);
    const uint64_t count = static_cast<uint64_t>(
        std::max<int64_t>(1, contact_horizon / window_duration));
    const uint64_t first = current >= count - 1 ? current - (count - 1) : 0;

    std::vector<WindowKeyPair> keys;
    keys.reserve(current - first + 1);
    for (uint64_t i = first; i <= current; ++i) {
        keys.push_back(derive_window_keypair(seed, i));
    }
    return keys;
}

// First n bits of SHA-256(public key), packed big-endian; unused bits zero.
struct PrefixTag {
    uint8_t n_bits = 0;
    std::array<uint8_t, 4> bits{};

    size_t byte_length() const { return (n_bits + 7) / 8; }

    bool operator==(const PrefixTag&) const = default;
};

inline PrefixTag key_prefix_tag(const PublicKey& public_key, int n_bits) {
    if (n_bits < 0 || n_bits > 32) {
        throw std::invalid_argument("prefix length must be within 0..32 bits");
    }
    PrefixTag tag;
    tag.n_bits = static_cast<uint8_t>(n_bits);
    const auto digest = sha256(public_key);
    int remaining = n_bits;
    for (size_t i = 0; remaining > 0; ++i) {
        const int take = std::min(remaining, 8);
        const uint8_t mask =
            static_cast<uint8_t>(0xff << (8 - take));  // high bits first
        tag.bits[i] = digest[i] & mask;
        remaining -= take;
    }
    return tag;
}

struct Ciphertext {
    PublicKey ephemeral_public{};
    Bytes body;
    std::array<uint8_t, kAuthTagBytes> auth_tag{};

    size_t size() const { return kCiphertextOverhead + body.size(); }

    Bytes to_bytes() const {
        Bytes out;
        out.reserve(size());
        out.insert(out.end(), ephemeral_public.begin(), ephemeral_public.end());
        out.insert(out.end(), body.begin(), body.end());
        out.insert(out.end(), auth_tag.begin(), auth_tag.end());
        return out;
    }

    static std::optional<Ciphertext> from_bytes(std::span<const uint8_t> raw) {
        if (raw.size() < kCiphertextOverhead) {
            return std::nullopt;
        }
        Ciphertext ct;
        std::memcpy(ct.ephemeral_public.data(), raw.data(), kPublicKeyBytes);
        ct.body.assign(raw.begin() + kPublicKeyBytes,
                       raw.end() - kAuthTagBytes);
        std::memcpy(ct.auth_tag.data(), raw.data() + raw.size() - kAuthTagBytes,
                    kAuthTagBytes);
        return ct;
    }
};

// Hybrid scheme behind a narrow interface so the scaling benchmarks can
// swap in a reduced-cost cipher while exercising the identical filtering
// and attempt-counting paths.
class Cipher {
public:
    virtual ~Cipher() = default;
    virtual Ciphertext encrypt(const PublicKey& recipient,
                               std::span<const uint8_t> plaintext,
                               RandomSource& rng) const = 0;
    virtual std::optional<Bytes> decrypt(const WindowKeyPair& keypair,
                                         const Ciphertext& ct) const = 0;
    virtual const char* name() const = 0;
};

// X25519 ephemeral-static agreement + HKDF-SHA256 + ChaCha20-Poly1305.
class SodiumCipher final : public Cipher {
public:
    Ciphertext encrypt(const PublicKey& recipient,
                       std::span<const uint8_t> plaintext,
                       RandomSource& rng) const override {
        ensure_sodium_init();
        if (plaintext.size() > kMaxPlaintextBytes) {
            throw std::invalid_argument("plaintext exceeds 64 KiB cap");
        }
        std::array<uint8_t, 32> esk{};
        rng.fill(esk.data(), esk.size());
        detail::clamp_scalar(esk);

        Ciphertext ct;
        crypto_scalarmult_base(ct.ephemeral_public.data(), esk.data());

        std::array<uint8_t, 32> shared{};
        if (crypto_scalarmult(shared.data(), esk.data(), recipient.data()) !=
            0) {
            throw std::invalid_argument("invalid recipient public key");
        }
        const auto [key, nonce] = session_key(shared, ct.ephemeral_public,
                                              recipient);

        ct.body.resize(plaintext.size());
        unsigned long long tag_len = 0;
        crypto_aead_chacha20poly1305_ietf_encrypt_detached(
            ct.body.data(), ct.auth_tag.data(), &tag_len, plaintext.data(),
            plaintext.size(), nullptr, 0, nullptr, nonce.data(), key.data());
        return ct;
    }

    std::optional<Bytes> decrypt(const WindowKeyPair& keypair,
                                 const Ciphertext& ct) const override {
        ensure_sodium_init();
        std::array<uint8_t, 32> shared{};
        if (crypto_scalarmult(shared.data(), keypair.secret_key.data(),
                              ct.ephemeral_public.data()) != 0) {
            return std::nullopt;
        }
        const auto [key, nonce] = session_key(shared, ct.ephemeral_public,
                                              keypair.public_key);

        Bytes plaintext(ct.body.size());
        if (crypto_aead_chacha20poly1305_ietf_decrypt_detached(
                plaintext.data(), nullptr, ct.body.data(), ct.body.size(),
                ct.auth_tag.data(), nullptr, 0, nonce.data(),
                key.data()) != 0) {
            return std::nullopt;
        }
        return plaintext;
    }

    const char* name() const override { return "x25519-chacha20poly1305"; }

private:
    static std::pair<std::array<uint8_t, 32>, std::array<uint8_t, 12>>
    session_key(const std::array<uint8_t, 32>& shared,
                const PublicKey& ephemeral, const PublicKey& recipient) {
        Bytes salt;
        salt.insert(salt.end(), ephemeral.begin(), ephemeral.end());
        salt.insert(salt.end(), recipient.begin(), recipient.end());
        const Bytes okm = detail::hkdf_sha256(
            shared, salt, detail::as_bytes(detail::kBoxInfo), 44);
        std::array<uint8_t, 32> key{};
        std::array<uint8_t, 12> nonce{};
        std::memcpy(key.data(), okm.data(), 32);
        std::memcpy(nonce.data(), okm.data() + 32, 12);
        return {key, nonce};
    }
};

// Reduced-cost cipher for count-exact scaling runs: same wire layout, same
// silent wrong-key failure, a few SHA-256 calls per operation instead of a
// curve multiplication. Not secure; benchmarking only.
class StubCipher final : public Cipher {
public:
    Ciphertext encrypt(const PublicKey& recipient,
                       std::span<const uint8_t> plaintext,
                       RandomSource& rng) const override {
        if (plaintext.size() > kMaxPlaintextBytes) {
            throw std::invalid_argument("plaintext exceeds 64 KiB cap");
        }
        Ciphertext ct;
        rng.fill(ct.ephemeral_public.data(), ct.ephemeral_public.size());
        const auto key = recipient_key(recipient);
        ct.body.assign(plaintext.begin(), plaintext.end());
        xor_keystream(ct.body, key, ct.ephemeral_public);
        ct.auth_tag = tag_for(key, ct.ephemeral_public, plaintext);
        return ct;
    }

    std::optional<Bytes> decrypt(const WindowKeyPair& keypair,
                                 const Ciphertext& ct) const override {
        const auto key = recipient_key(keypair.public_key);
        Bytes plaintext = ct.body;
        xor_keystream(plaintext, key, ct.ephemeral_public);
        if (tag_for(key, ct.ephemeral_public, plaintext) != ct.auth_tag) {
            return std::nullopt;
        }
        return plaintext;
    }

    const char* name() const override { return "sha256-stub"; }

private:
    static std::array<uint8_t, 32> recipient_key(const PublicKey& pk) {
        Bytes input;
        const auto label = detail::as_bytes("wetrace.stub.key");
        input.insert(input.end(), label.begin(), label.end());
        input.insert(input.end(), pk.begin(), pk.end());
        return sha256(input);
    }

    static void xor_keystream(Bytes& data, const std::array<uint8_t, 32>& key,
                              const PublicKey& ephemeral) {
        Bytes block_input;
        block_input.insert(block_input.end(), key.begin(), key.end());
        block_input.insert(block_input.end(), ephemeral.begin(),
                           ephemeral.end());
        put_u32_le(block_input, 0);
        const size_t counter_at = block_input.size() - 4;
        for (size_t off = 0, counter = 0; off < data.size();
             off += 32, ++counter) {
            block_input[counter_at] = static_cast<uint8_t>(counter);
            block_input[counter_at + 1] = static_cast<uint8_t>(counter >> 8);
            block_input[counter_at + 2] = static_cast<uint8_t>(counter >> 16);
            block_input[counter_at + 3] = static_cast<uint8_t>(counter >> 24);
            const auto block = sha256(block_input);
            for (size_t i = 0; i < 32 && off + i < data.size(); ++i) {
                data[off + i] ^= block[i];
            }
        }
    }

    static std::array<uint8_t, kAuthTagBytes> tag_for(
        const std::array<uint8_t, 32>& key, const PublicKey& ephemeral,
        std::span<const uint8_t> plaintext) {
        Bytes input;
        input.insert(input.end(), key.begin(), key.end());
        input.insert(input.end(), ephemeral.begin(), ephemeral.end());
        input.insert(input.end(), plaintext.begin(), plaintext.end());
        const auto digest = sha256(input);
        std::array<uint8_t, kAuthTagBytes> tag{};
        std::memcpy(tag.data(), digest.data(), kAuthTagBytes);
        return tag;
    }
};

inline const Cipher& sodium_cipher() {
    static const SodiumCipher cipher;
    return cipher;
}

inline const Cipher& stub_cipher() {
    static const StubCipher cipher;
    return cipher;
}

inline Ciphertext encrypt_to(const PublicKey& recipient,
                             std::span<const uint8_t> plaintext,
                             RandomSource& rng = system_random()) {
    return sodium_cipher().encrypt(recipient, plaintext, rng);
}

inline std::optional<Bytes> try_decrypt(const WindowKeyPair& keypair,
                                        const Ciphertext& ct) {
    return sodium_cipher().decrypt(keypair, ct);
}

}  // namespace wetrace
