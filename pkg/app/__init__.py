# MirrorBot: embodied self-recognition experiments
