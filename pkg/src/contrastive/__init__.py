"""
Contact-aware triplet construction and the triplet margin loss over z_o.
"""
