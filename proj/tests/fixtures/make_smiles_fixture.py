"""Writes smiles_counts.json: heavy-atom and bond counts from RDKit."""

import json
import pathlib

from rdkit import Chem

MOLECULES = {
    "Mol-1": "Cc1cccc(/N=N/c2ccc(N(C)C)cc2)c1",
    "Mol-2": "O=C(c1ccccc1)C1CCC1",
    "Mol-3": "C=C(C)[C@H]1CN[C@H](C(=O)O)[C@H]1CC(=O)O",
    "Mol-4": "c1ccc2sc(SNC3CCCCC3)nc2c1",
    "Mol-5": "C=CCSSCC=C",
    "Mol-6": "CC(C)(C)c1cccc(C(C)(C)C)c1O",
    "Mol-7": "C[C@@H]1CC2(OC3C[C@@]4(C)C5=CC[C@H]6C(C)(C)C(O[C@@H]7OC[C@@H](O)[C@H](O)[C@H]7O)"
    "CC[C@@]67C[C@@]57CC[C@]4(C)C31)OC(O)C1(C)OC21",
    "Mol-8": "O=C(CCCCCCC(=O)Nc1ccccc1)NO",
    "Mol-9": "CC/C=C\\C/C=C\\C/C=C\\CCCCCCCC(=O)O",
    "Mol-10": "Cl[Si](Cl)(c1ccccc1)c1ccccc1",
}

out = []
for name, smiles in MOLECULES.items():
    mol = Chem.MolFromSmiles(smiles)
    out.append({"name": name, "smiles": smiles, "atoms": mol.GetNumAtoms(), "bonds": mol.GetNumBonds()})

path = pathlib.Path(__file__).with_name("smiles_counts.json")
path.write_text(json.dumps(out, indent=2) + "\n")
