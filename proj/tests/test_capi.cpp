// The C interface, exercised the way an external caller would use it.
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <equimap/equimap.h>

// Cross-checks against the C++ core.
#include "emap.hpp"
#include "hog.hpp"
#include "synth.hpp"

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("version and error strings are always available") {
  REQUIRE(eqm_version() != nullptr);
  CHECK(std::strlen(eqm_version()) > 0);
  REQUIRE(eqm_last_error() != nullptr);
}

TEST_CASE("image lifecycle through the C api") {
  std::vector<double> pix(16 * 12, 0.0);
  for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = double(i % 7) / 7.0;
  eqm_image* img = nullptr;
  REQUIRE(eqm_image_create(16, 12, 1, pix.data(), &img) == EQM_OK);
  CHECK(eqm_image_width(img) == 16);
  CHECK(eqm_image_height(img) == 12);
  CHECK(eqm_image_channels(img) == 1);
  std::vector<double> back(pix.size(), -1.0);
  REQUIRE(eqm_image_pixels(img, back.data(), back.size()) == EQM_OK);
  CHECK(back == pix);
  CHECK(eqm_image_pixels(img, back.data(), 3) == EQM_ERR_INVALID);  // short buffer

  std::string path = tmp_path("eqm_capi_img.pgm");
  REQUIRE(eqm_image_save(img, path.c_str()) == EQM_OK);
  eqm_image* loaded = nullptr;
  REQUIRE(eqm_image_load(path.c_str(), &loaded) == EQM_OK);
  CHECK(eqm_image_width(loaded) == 16);
  std::vector<double> lp(pix.size());
  REQUIRE(eqm_image_pixels(loaded, lp.data(), lp.size()) == EQM_OK);
  for (std::size_t i = 0; i < pix.size(); ++i)
    CHECK(lp[i] == doctest::Approx(pix[i]).epsilon(0.5 / 255.0 + 1e-12));
  eqm_image_free(loaded);
  eqm_image_free(img);
  std::filesystem::remove(path);

  eqm_image* missing = nullptr;
  CHECK(eqm_image_load(tmp_path("eqm_no_such_file.pgm").c_str(), &missing) == EQM_ERR_IO);
  CHECK(std::strlen(eqm_last_error()) > 0);
}

TEST_CASE("warp and transform parsing") {
  std::vector<double> pix(8 * 8);
  for (std::size_t i = 0; i < pix.size(); ++i) pix[i] = double(i) / 63.0;
  eqm_image* img = nullptr;
  REQUIRE(eqm_image_create(8, 8, 1, pix.data(), &img) == EQM_OK);

  double id[6] = {1, 0, 0, 0, 1, 0};
  eqm_image* same = nullptr;
  REQUIRE(eqm_image_warp(img, id, 1, 1, &same) == EQM_OK);
  std::vector<double> sp(pix.size());
  REQUIRE(eqm_image_pixels(same, sp.data(), sp.size()) == EQM_OK);
  CHECK(sp == pix);  // identity warp is exact at pixel centers
  eqm_image_free(same);

  double hf[6];
  REQUIRE(eqm_parse_transform("hflip", 8, 8, hf) == EQM_OK);
  CHECK(hf[0] == -1.0);
  CHECK(hf[2] == 7.0);  // x -> 7 - x
  eqm_image* flipped = nullptr;
  REQUIRE(eqm_image_warp(img, hf, 1, 1, &flipped) == EQM_OK);
  std::vector<double> fp(pix.size());
  REQUIRE(eqm_image_pixels(flipped, fp.data(), fp.size()) == EQM_OK);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK(fp[std::size_t(y * 8 + x)] == pix[std::size_t(y * 8 + 7 - x)]);
  eqm_image_free(flipped);

  double junk[6];
  CHECK(eqm_parse_transform("swirl", 8, 8, junk) == EQM_ERR_INVALID);
  eqm_image_free(img);
}

TEST_CASE("hog extraction and field files") {
  eqm::Dataset ds = eqm::synth_classification_set(91, 1, 2);
  const eqm::Image& ref = ds.items[0].image;
  eqm_image* img = nullptr;
  REQUIRE(eqm_image_create(ref.width, ref.height, ref.channels, ref.data.data(), &img) == EQM_OK);
  eqm_field* f = nullptr;
  REQUIRE(eqm_hog_extract(img, 8, 9, &f) == EQM_OK);
  CHECK(eqm_field_height(f) == 8);
  CHECK(eqm_field_width(f) == 8);
  CHECK(eqm_field_depth(f) == 31);
  double geom[4];
  REQUIRE(eqm_field_geometry(f, geom) == EQM_OK);
  CHECK(geom[0] == 8.0);
  CHECK(geom[2] == 3.5);

  eqm::FeatureField cpp = eqm::extract_hog(ref, eqm::HogConfig{});
  std::vector<double> data(cpp.data.size());
  REQUIRE(eqm_field_data(f, data.data(), data.size()) == EQM_OK);
  CHECK(data == cpp.data);

  std::string path = tmp_path("eqm_capi_field.eqf");
  REQUIRE(eqm_field_save(f, path.c_str()) == EQM_OK);
  eqm_field* back = nullptr;
  REQUIRE(eqm_field_load(path.c_str(), &back) == EQM_OK);
  std::vector<double> data2(cpp.data.size());
  REQUIRE(eqm_field_data(back, data2.data(), data2.size()) == EQM_OK);
  CHECK(data2 == cpp.data);
  eqm_field_free(back);
  eqm_field_free(f);
  eqm_image_free(img);
  std::filesystem::remove(path);
}

TEST_CASE("permutation maps through the C api") {
  eqm_map* map = nullptr;
  REQUIRE(eqm_hog_permutation(8, 8, 8, 9, "hflip", &map) == EQM_OK);

  eqm::Dataset ds = eqm::synth_classification_set(92, 1, 2);
  eqm::FeatureField cpp = eqm::extract_hog(ds.items[0].image, eqm::HogConfig{});
  std::string fpath = tmp_path("eqm_capi_perm_in.eqf");
  eqm::save_field(cpp, fpath);
  eqm_field* fin = nullptr;
  REQUIRE(eqm_field_load(fpath.c_str(), &fin) == EQM_OK);

  eqm_field* fout = nullptr;
  REQUIRE(eqm_map_apply(map, fin, &fout) == EQM_OK);
  eqm::EquivariantMap P = eqm::hog_permutation(8, 8, eqm::HogConfig{}, "hflip");
  eqm::FeatureField expect = eqm::apply(P, cpp);
  std::vector<double> got(expect.data.size());
  REQUIRE(eqm_field_data(fout, got.data(), got.size()) == EQM_OK);
  CHECK(got == expect.data);

  std::string mpath = tmp_path("eqm_capi_perm.eqm");
  REQUIRE(eqm_map_save(map, mpath.c_str()) == EQM_OK);
  eqm_map* mback = nullptr;
  REQUIRE(eqm_map_load(mpath.c_str(), &mback) == EQM_OK);
  eqm_field* fout2 = nullptr;
  REQUIRE(eqm_map_apply(mback, fin, &fout2) == EQM_OK);
  std::vector<double> got2(expect.data.size());
  REQUIRE(eqm_field_data(fout2, got2.data(), got2.size()) == EQM_OK);
  CHECK(got2 == expect.data);

  eqm_map* unsupported = nullptr;
  CHECK(eqm_hog_permutation(8, 8, 8, 9, "rot90", &unsupported) == EQM_ERR_UNSUPPORTED);

  eqm_field_free(fout2);
  eqm_map_free(mback);
  eqm_field_free(fout);
  eqm_field_free(fin);
  eqm_map_free(map);
  std::filesystem::remove(fpath);
  std::filesystem::remove(mpath);
}

TEST_CASE("null arguments are rejected with a message") {
  CHECK(eqm_image_load(nullptr, nullptr) == EQM_ERR_INVALID);
  CHECK(std::strlen(eqm_last_error()) > 0);
  CHECK(eqm_image_create(4, 4, 1, nullptr, nullptr) == EQM_ERR_INVALID);
  CHECK(eqm_image_warp(nullptr, nullptr, 1, 1, nullptr) == EQM_ERR_INVALID);
  CHECK(eqm_field_load(nullptr, nullptr) == EQM_ERR_INVALID);
  CHECK(eqm_map_apply(nullptr, nullptr, nullptr) == EQM_ERR_INVALID);
  CHECK(eqm_run(nullptr, nullptr, nullptr) == EQM_ERR_INVALID);
  CHECK(eqm_image_create(0, 4, 1, nullptr, nullptr) == EQM_ERR_INVALID);
}

TEST_CASE("eqm_run dispatch and dry-run plans") {
  char* summary = nullptr;
  CHECK(eqm_run("no-such-command", "{}", &summary) == EQM_ERR_INVALID);
  CHECK(eqm_run("selftest", "this is not json", &summary) == EQM_ERR_INVALID);
  CHECK(eqm_run("selftest", "[1,2,3]", &summary) == EQM_ERR_INVALID);
  CHECK(eqm_run("selftest", "{\"bogus_key\": 1}", &summary) == EQM_ERR_INVALID);

  std::string dir = tmp_path("eqm_capi_run");
  std::string cfg = std::string("{\"dry_run\": true, \"kind\": \"class\", \"n\": 4, \"out\": \"") +
                    dir + "\"}";
  REQUIRE(eqm_run("synth", cfg.c_str(), &summary) == EQM_OK);
  REQUIRE(summary != nullptr);
  std::string s(summary);
  CHECK(s.find("\"dry_run\"") != std::string::npos);
  CHECK(s.find("synth") != std::string::npos);
  CHECK(!std::filesystem::exists(dir));  // a plan, not a run
  eqm_string_free(summary);
}
