#include <syncnoise/errors.hpp>
#include <syncnoise/hashing.hpp>

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

namespace syncnoise {

namespace {

struct MdCtxDeleter
{
  void operator()(EVP_MD_CTX* ctx) const noexcept { EVP_MD_CTX_free(ctx); }
};

std::string to_hex(const unsigned char* bytes, unsigned int n)
{
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (unsigned int i = 0; i < n; ++i)
  {
    out[2 * i] = digits[bytes[i] >> 4];
    out[2 * i + 1] = digits[bytes[i] & 0xf];
  }
  return out;
}

class Sha256
{
public:
  Sha256()
    : ctx_(EVP_MD_CTX_new())
  {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw Error("sha256 init failed");
  }

  void update(const void* data, std::size_t size)
  {
    if (EVP_DigestUpdate(ctx_.get(), data, size) != 1)
      throw Error("sha256 update failed");
  }

  std::string hex_digest()
  {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), digest.data(), &length) != 1)
      throw Error("sha256 final failed");
    return to_hex(digest.data(), length);
  }

private:
  std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx_;
};

} // namespace

std::string sha256_hex(std::string_view data)
{
  Sha256 hash;
  hash.update(data.data(), data.size());
  return hash.hex_digest();
}

std::string sha256_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string() + " for hashing");
  Sha256 hash;
  std::array<char, 1 << 16> buffer;
  while (in)
  {
    in.read(buffer.data(), buffer.size());
    if (in.gcount() > 0)
      hash.update(buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  return hash.hex_digest();
}

} // namespace syncnoise
