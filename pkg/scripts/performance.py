import sys
import time

from shoobx.galr import cloud, handspec, retarget, trainkit

name = sys.argv[1] if len(sys.argv) > 1 else "toy5f"
count = int(sys.argv[2]) if len(sys.argv) > 2 else 50

spec = handspec.load_bundled(name)
params = cloud.CloudParams()
model = retarget.GaLRModel(cloud_params=params)
states = trainkit.sample_reachable_states(spec, count, seed=0).states

t1 = time.time()

posed = [handspec.forward_kinematics(spec, q) for q in states]

t2 = time.time()

print("Forward kinematics: ")
print("Average: %.3f ms/state" % (1000 * (t2 - t1) / count))

clouds = [
    cloud.sample_surface(
        p, params.density, cloud.state_seed(spec.embodiment_id, q.angles)
    )
    for p, q in zip(posed, states)
]

t3 = time.time()

print("Surface sampling: ")
print("Average: %.3f ms/state" % (1000 * (t3 - t2) / count))
print("Points: %.0f per cloud" % (sum(len(c.points) for c in clouds) / count))

pyramids = [
    cloud.build_pyramid(c, params.base_voxel, params.radius_scale) for c in clouds
]

t4 = time.time()

print("Pyramid: ")
print("Average: %.3f ms/state" % (1000 * (t4 - t3) / count))

for pyramid in pyramids:
    model.encode(pyramid)

t5 = time.time()

print("Encode: ")
print("Average: %.3f ms/state" % (1000 * (t5 - t4) / count))
print("Throughput: %.3f states/s" % (count / (t5 - t1)))
