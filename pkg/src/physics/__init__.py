"""
Voxelized capsule bodies and penetration / contact metrics.
"""
