# Dataset parsing and targeted-attack assignments
