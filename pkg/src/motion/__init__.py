"""
Motion representation: 6D rotations, forward kinematics, named skeletons and
feature normalization.
"""
