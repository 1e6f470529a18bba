"""Regenerates the fixed-weight ONNX graphs used by the hlf tests.

gap3.onnx           image[1,3,16,16] -> GlobalAveragePool -> Flatten -> embedding[1,3]
gap3_one_channel.onnx  same graph declaring a single input channel
"""
import os

import onnx
from onnx import TensorProto, helper

HERE = os.path.dirname(os.path.abspath(__file__))


def pooling_graph(channels):
    image = helper.make_tensor_value_info("image", TensorProto.FLOAT, [1, channels, 16, 16])
    embedding = helper.make_tensor_value_info("embedding", TensorProto.FLOAT, [1, channels])
    nodes = [
        helper.make_node("GlobalAveragePool", ["image"], ["pooled"]),
        helper.make_node("Flatten", ["pooled"], ["embedding"], axis=1),
    ]
    graph = helper.make_graph(nodes, "gap", [image], [embedding])
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", 13)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    return model


onnx.save(pooling_graph(3), os.path.join(HERE, "gap3.onnx"))
onnx.save(pooling_graph(1), os.path.join(HERE, "gap3_one_channel.onnx"))
