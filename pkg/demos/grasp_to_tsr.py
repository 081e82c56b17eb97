"""From a depth image to a constrained pull.

A synthetic RGB-D scene with one door is segmented into a grasp pose, the handle
is unlatched, and a task space region for the first opening move is built from
the prismatic guess and sampled.
"""
from doorkin.doorsim import SceneConfig, generate_scene, revolute_door
from doorkin.geometry import handle_transform
from doorkin.grasp import estimate_grasp_poses
from doorkin.kinfit import PrismaticModel
from doorkin.tsr import sample_uniform, tsr_from_prismatic
from doorkin.unlatch import HandleMechanism, unlatch

handle = handle_transform([-1, 0, 0], [1.9, 0.3, 1.0])
cloud, boxes = generate_scene(revolute_door(handle, 0.7), config=SceneConfig(depth_sigma=0.002))
result = estimate_grasp_poses(cloud, boxes)
grasp = result.grasps[0]
print(f"{len(result.doors)} door plane(s), grasp at {grasp.pose.translation.round(3)}")
print(f"grasp line: {grasp.to_line()}")

outcome = unlatch(HandleMechanism("lever_cw"))
print(f"unlatch: {outcome.state} after {len(outcome.attempts)} attempt(s)")

# before any motion the door is assumed to slide along the handle x axis
guess = PrismaticModel(grasp.pose.translation, grasp.handle_pose.rotation[:, 0])
spec = tsr_from_prismatic(guess, 0.03, grasp.pose)
for pose in sample_uniform(spec, 3, seed=0):
    print(f"pull target {pose.translation.round(4)}")
