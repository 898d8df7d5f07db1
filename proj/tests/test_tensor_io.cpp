#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "vattn/rng.hpp"
#include "vattn/tensor_io.hpp"
#include "vattn/workload.hpp"

using namespace vattn;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const char* name) : path(std::string("vattn_test_") + name + ".spat") {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("binary16 tensors round-trip bit for bit") {
    TempFile f("roundtrip16");
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const Tensor<Half> t = normal_tensor_f16(seed, 1, {3, 2, 8, 4});
        write_spat(f.path, t);
        const Tensor<Half> back = read_spat_f16(f.path);
        CHECK(back.dims() == t.dims());
        CHECK(back == t);
    }
}

TEST_CASE("binary32 and binary64 tensors round-trip") {
    TempFile f("roundtrip3264");
    Tensor<float> t32(std::vector<std::size_t>{4, 5});
    for (std::size_t i = 0; i < t32.size(); ++i)
        t32.data()[i] = static_cast<float>(bits_to_unit(mix64(i)) - 0.5);
    write_spat(f.path, t32);
    const auto any32 = read_spat(f.path);
    CHECK(std::get<Tensor<float>>(any32) == t32);

    Tensor<double> t64(std::vector<std::size_t>{7});
    for (std::size_t i = 0; i < t64.size(); ++i) t64.data()[i] = bits_to_unit(mix64(i + 9)) * 1e9;
    write_spat(f.path, t64);
    const auto any64 = read_spat(f.path);
    CHECK(std::get<Tensor<double>>(any64) == t64);
}

TEST_CASE("bad magic is rejected") {
    TempFile f("badmagic");
    std::ofstream os(f.path, std::ios::binary);
    os << "NOPE" << std::string(16, '\0');
    os.close();
    CHECK_THROWS_WITH_AS(read_spat(f.path), doctest::Contains("bad magic"), std::runtime_error);
}

TEST_CASE("zero dimensions are rejected") {
    TempFile f("zerodim");
    std::ofstream os(f.path, std::ios::binary);
    os << "SPAT";
    os.put(1);   // version
    os.put(0);   // f16
    os.put(2);   // rank
    const char dims[16] = {4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};  // 4 x 0
    os.write(dims, 16);
    os.close();
    CHECK_THROWS_WITH_AS(read_spat(f.path), doctest::Contains("zero dimension"),
                         std::runtime_error);
}

TEST_CASE("truncated payloads and trailing bytes are rejected") {
    TempFile f("truncated");
    const Tensor<Half> t = normal_tensor_f16(3, 1, {4, 4});
    write_spat(f.path, t);

    // Chop two bytes off.
    {
        std::ifstream is(f.path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        std::ofstream os(f.path, std::ios::binary | std::ios::trunc);
        os.write(all.data(), static_cast<std::streamsize>(all.size() - 2));
    }
    CHECK_THROWS_WITH_AS(read_spat(f.path), doctest::Contains("truncated"), std::runtime_error);

    // Rewrite and append garbage.
    write_spat(f.path, t);
    {
        std::ofstream os(f.path, std::ios::binary | std::ios::app);
        os.put(0x5a);
    }
    CHECK_THROWS_WITH_AS(read_spat(f.path), doctest::Contains("trailing"), std::runtime_error);
}

TEST_CASE("dimension overflow is rejected") {
    TempFile f("overflow");
    std::ofstream os(f.path, std::ios::binary);
    os << "SPAT";
    os.put(1);
    os.put(0);
    os.put(2);
    // Two huge dims whose product overflows.
    for (int r = 0; r < 2; ++r) {
        for (int i = 0; i < 8; ++i) os.put(static_cast<char>(0xff));
    }
    os.close();
    CHECK_THROWS_WITH_AS(read_spat(f.path), doctest::Contains("overflow"), std::runtime_error);
}

TEST_CASE("dtype mismatch helper") {
    TempFile f("dtype");
    Tensor<float> t(std::vector<std::size_t>{2, 2});
    write_spat(f.path, t);
    CHECK_THROWS_AS(read_spat_f16(f.path), std::runtime_error);
}

TEST_CASE("tensor constructor rejects zero dims") {
    CHECK_THROWS_AS(Tensor<float>(std::vector<std::size_t>{3, 0}), std::invalid_argument);
}
