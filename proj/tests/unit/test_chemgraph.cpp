#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_support.hpp"

using namespace synflow;
using namespace synflow::chem;
using synflow::testing::canon;

TEST_SUITE("chemgraph") {

TEST_CASE("parse minimal chain") {
  const auto m = parse_smiles("CCO");
  REQUIRE(m.size() == 3);
  CHECK(m.atom(0).element == Element::C);
  CHECK(m.atom(2).element == Element::O);
  REQUIRE(m.bonds().size() == 2);
  for (const auto& b : m.bonds()) CHECK(b.order == BondOrder::Single);
  CHECK(m.atom(0).total_h() == 3);
  CHECK(m.atom(1).total_h() == 2);
  CHECK(m.atom(2).total_h() == 1);
}

TEST_CASE("parse benzene") {
  const auto m = parse_smiles("c1ccccc1");
  REQUIRE(m.size() == 6);
  REQUIRE(m.bonds().size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(m.atom(i).aromatic);
    CHECK(m.atom(i).total_h() == 1);
    CHECK(m.atom_in_ring(i));
  }
  for (const auto& b : m.bonds()) CHECK(b.order == BondOrder::Aromatic);
}

TEST_CASE("parse errors carry offsets") {
  auto offset_of = [](std::string_view s) -> long {
    try {
      parse_smiles(s);
    } catch (const ParseError& e) {
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  CHECK(offset_of("C(") == 1);
  CHECK(offset_of("CC)") == 2);
  CHECK(offset_of("C1CC") == 1);
  CHECK(offset_of("CX") == 1);
  CHECK(offset_of("C[*]") == 2);
  CHECK(offset_of("C*") == 1);
  CHECK(offset_of("[13C]") == 1);
  CHECK(offset_of("CC(C)(C)(C)C") == 1);  // pentavalent carbon
  CHECK(offset_of("CC=") == 3);
  CHECK(offset_of("cc") == 0);  // aromatic atoms outside a ring
}

TEST_CASE("stereo marks are stripped and flagged") {
  SmilesFlags flags;
  const auto m = parse_smiles("F/C=C/F", &flags);
  CHECK(flags.stereo_stripped);
  CHECK(canon("F/C=C/F") == canon("FC=CF"));
  SmilesFlags f2;
  parse_smiles("N[C@@H](C)C(=O)O", &f2);
  CHECK(f2.stereo_stripped);
  CHECK(canon("N[C@@H](C)C(=O)O") == canon("NC(C)C(=O)O"));
  SmilesFlags f3;
  parse_smiles("CCO", &f3);
  CHECK_FALSE(f3.stereo_stripped);
}

TEST_CASE("bracket atoms and charges") {
  const auto ammonium = parse_smiles("[NH4+]");
  CHECK(ammonium.atom(0).charge == 1);
  CHECK(ammonium.atom(0).total_h() == 4);
  const auto nitro = parse_smiles("[O-][N+](=O)c1ccccc1");
  CHECK(nitro.atom(0).charge == -1);
  CHECK(nitro.atom(1).charge == 1);
  CHECK(nitro.atom(1).total_h() == 0);
  const auto pyrrole = parse_smiles("c1cc[nH]c1");
  CHECK(pyrrole.atom(3).total_h() == 1);
  const auto pyridine = parse_smiles("c1ccncc1");
  CHECK(pyridine.atom(3).total_h() == 0);
  const auto thiophene = parse_smiles("c1ccsc1");
  CHECK(thiophene.atom(3).total_h() == 0);
  CHECK(parse_smiles("CS(=O)(=O)Cl").atom(1).total_h() == 0);
}

TEST_CASE("biaryl bond between aromatic atoms is single") {
  const auto m = parse_smiles("c1ccccc1c1ccccc1");
  const int b = m.find_bond(5, 6);
  REQUIRE(b >= 0);
  CHECK(m.bond(b).order == BondOrder::Single);
  CHECK_FALSE(m.bond_in_ring(b));
  CHECK(canon("c1ccccc1c1ccccc1") == canon("c1ccc(cc1)-c1ccccc1"));
}

TEST_CASE("percent ring closures") {
  CHECK(canon("C%12CCCCC%12") == canon("C1CCCCC1"));
}

TEST_CASE("canonical form is order independent") {
  CHECK(canon("OCC") == canon("CCO"));
  CHECK(canon("c1ccccc1") == canon("c1ccccc1"));
  CHECK(canon("Cc1ccccc1") == canon("c1ccc(C)cc1"));
  CHECK(canon("c1ccc(C)cc1") == canon("c1cc(C)ccc1"));
  CHECK(canon("CC(=O)O") == canon("OC(C)=O"));
  CHECK(canon("CNC(C)=O") == canon("CC(=O)NC"));
  CHECK(canon("CCO") != canon("CCN"));
}

TEST_CASE("canonicalization rejects fragments") {
  CHECK_THROWS_AS(write_canonical_smiles(parse_smiles("C.C")), Error);
  CHECK(write_canonical_smiles(MolGraph{}).empty());
}

TEST_CASE("canonical SMILES is permutation invariant and round-trips") {
  Rng rng(20240601);
  int failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = synflow::testing::random_molecule(rng, 12);
    const auto s = write_canonical_smiles(m);
    const auto perm = synflow::testing::random_permutation(rng, m.size());
    const auto mp = m.permuted(perm);
    if (write_canonical_smiles(mp) != s) ++failures;
    const auto back = parse_smiles(s);
    if (!isomorphic(back, m)) ++failures;
    if (write_canonical_smiles(back) != s) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("isomorphism check") {
  CHECK(isomorphic(parse_smiles("CCO"), parse_smiles("OCC")));
  CHECK_FALSE(isomorphic(parse_smiles("CCO"), parse_smiles("COC")));
  CHECK_FALSE(isomorphic(parse_smiles("C=CO"), parse_smiles("CCO")));
  CHECK(isomorphic(MolGraph{}, MolGraph{}));
}

TEST_CASE("fingerprints") {
  const auto a = morgan_fingerprint(parse_smiles("CC(=O)Nc1ccccc1"));
  const auto b = morgan_fingerprint(parse_smiles("c1ccc(NC(C)=O)cc1"));
  CHECK(a == b);
  CHECK(a.nbits() == 2048);
  CHECK(a.radius() == 2);
  CHECK(a.popcount() >= 1);

  const auto empty = morgan_fingerprint(MolGraph{});
  CHECK(empty.popcount() == 0);

  const auto o = morgan_fingerprint(parse_smiles("CCO"), 0, 2048);
  const auto n = morgan_fingerprint(parse_smiles("CCN"), 0, 2048);
  CHECK_FALSE(o == n);

  CHECK_THROWS_AS(morgan_fingerprint(parse_smiles("C"), 2, 100), ContractViolation);
  CHECK_THROWS_AS(morgan_fingerprint(parse_smiles("C"), -1, 64), ContractViolation);
}

TEST_CASE("fingerprints are permutation invariant") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = synflow::testing::random_molecule(rng, 12);
    const auto mp = m.permuted(synflow::testing::random_permutation(rng, m.size()));
    REQUIRE(morgan_fingerprint(m, 2, 256) == morgan_fingerprint(mp, 2, 256));
    CHECK(morgan_fingerprint(m, 2, 256).popcount() >= 1);
  }
}

TEST_CASE("tanimoto") {
  Fingerprint a(64, 0), b(64, 0), c(64, 0);
  a.set(1);
  a.set(2);
  a.set(3);
  b.set(2);
  b.set(3);
  b.set(4);
  c.set(10);
  CHECK(tanimoto(a, a) == 1.0);
  CHECK(tanimoto(a, c) == 0.0);
  CHECK(tanimoto(a, b) == doctest::Approx(0.5));
  CHECK(tanimoto(a, b) == tanimoto(b, a));
  CHECK(tanimoto(Fingerprint(64, 0), Fingerprint(64, 0)) == 1.0);
  CHECK_THROWS_AS(tanimoto(Fingerprint(64, 0), Fingerprint(128, 0)), ContractViolation);
}

TEST_CASE("Bemis-Murcko scaffolds") {
  auto scaffold_smiles = [](std::string_view s) {
    const auto sc = bemis_murcko_scaffold(parse_smiles(s));
    return write_canonical_smiles(sc.graph);
  };
  CHECK(scaffold_smiles("c1ccccc1") == canon("c1ccccc1"));
  CHECK(scaffold_smiles("Cc1ccccc1") == canon("c1ccccc1"));
  CHECK(scaffold_smiles("Cc1ccccc1C") == canon("c1ccccc1"));
  CHECK(scaffold_smiles("c1ccccc1CCc1ccccc1") == canon("c1ccccc1CCc1ccccc1"));
  CHECK(scaffold_smiles("CCC1CCC(=O)CC1") == canon("O=C1CCCCC1"));
  CHECK(scaffold_smiles("CC(=O)Nc1ccccc1") == canon("c1ccccc1"));
  CHECK(scaffold_smiles("Cn1cccc1") == canon("c1cc[nH]c1"));

  const auto acyclic = bemis_murcko_scaffold(parse_smiles("CCCC"));
  CHECK(acyclic.acyclic);
  CHECK(acyclic.graph.empty());
  CHECK_FALSE(bemis_murcko_scaffold(parse_smiles("c1ccccc1")).acyclic);
}

TEST_CASE("scaffold extraction is idempotent") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = synflow::testing::random_molecule(rng, 12);
    const auto once = bemis_murcko_scaffold(m);
    const auto twice = bemis_murcko_scaffold(once.graph);
    REQUIRE(write_canonical_smiles(once.graph) == write_canonical_smiles(twice.graph));
  }
}

TEST_CASE("heavy atom count") {
  CHECK(heavy_atom_count(parse_smiles("CCO")) == 3);
  CHECK(heavy_atom_count(MolGraph{}) == 0);
  CHECK(heavy_atom_count(parse_smiles("c1ccccc1")) == 6);
}

TEST_CASE("building block file") {
  const auto path = std::filesystem::temp_directory_path() / "synflow_bb_test.tsv";
  {
    std::ofstream out(path);
    out << "# comment\nCC(=O)O\tacetic\n\nCN\n";
  }
  const auto bbs = read_building_blocks(path);
  REQUIRE(bbs.size() == 2);
  CHECK(bbs[0].id == "acetic");
  CHECK(bbs[1].id.empty());
  CHECK(bbs[1].mol.size() == 2);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_building_blocks(path), Error);
}

}  // TEST_SUITE
