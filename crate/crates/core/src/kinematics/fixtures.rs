//! Small URDF documents used by tests, examples and the reach task.

/// Two revolute joints about z with unit links and a fixed tool frame.
pub const PLANAR2_URDF: &str = r#"<?xml version="1.0"?>
<robot name="planar2">
  <link name="base"/>
  <link name="upper"/>
  <link name="fore"/>
  <link name="tool"/>
  <joint name="shoulder" type="revolute">
    <origin xyz="0 0 0" rpy="0 0 0"/>
    <parent link="base"/>
    <child link="upper"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.14159" upper="3.14159"/>
  </joint>
  <joint name="elbow" type="revolute">
    <origin xyz="1 0 0" rpy="0 0 0"/>
    <parent link="upper"/>
    <child link="fore"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3.1" upper="3.1"/>
  </joint>
  <joint name="tool" type="fixed">
    <origin xyz="1 0 0" rpy="0 0 0"/>
    <parent link="fore"/>
    <child link="tool"/>
  </joint>
</robot>
"#;

/// Smallest valid document: one revolute joint.
pub const ONE_JOINT_URDF: &str = r#"<robot name="one">
  <link name="base"/>
  <link name="arm"/>
  <joint name="j0" type="revolute">
    <parent link="base"/>
    <child link="arm"/>
    <axis xyz="0 0 1"/>
    <limit lower="-1" upper="1"/>
  </joint>
</robot>
"#;

/// One revolute joint followed by a prismatic gripper finger.
pub const ARM_WITH_GRIPPER_URDF: &str = r#"<robot name="arm_gripper">
  <link name="base">
    <visual><geometry><box size="0.1 0.1 0.1"/></geometry></visual>
  </link>
  <link name="hand"/>
  <link name="finger"/>
  <joint name="wrist" type="revolute">
    <origin xyz="0 0 0.5" rpy="0 0 0"/>
    <parent link="base"/>
    <child link="hand"/>
    <axis xyz="0 0 1"/>
    <limit lower="-3" upper="3"/>
  </joint>
  <joint name="gripper_finger" type="prismatic">
    <origin xyz="0.1 0 0" rpy="0 0 0"/>
    <parent link="hand"/>
    <child link="finger"/>
    <axis xyz="0 1 0"/>
    <limit lower="0" upper="0.08"/>
    <dynamics damping="0.1"/>
  </joint>
  <transmission name="t0"/>
</robot>
"#;

/// A base joint whose child link carries two sibling joints.
pub const BRANCHED_URDF: &str = r#"<robot name="branched">
  <link name="base"/>
  <link name="torso"/>
  <link name="left"/>
  <link name="right"/>
  <joint name="waist" type="revolute">
    <parent link="base"/><child link="torso"/><axis xyz="0 0 1"/>
  </joint>
  <joint name="right_arm" type="revolute">
    <origin xyz="0 -0.2 0.5"/><parent link="torso"/><child link="right"/><axis xyz="0 1 0"/>
  </joint>
  <joint name="left_arm" type="revolute">
    <origin xyz="0 0.2 0.5"/><parent link="torso"/><child link="left"/><axis xyz="0 1 0"/>
  </joint>
</robot>
"#;

/// Serial chain with three revolute joints.
pub const SERIAL3_URDF: &str = r#"<robot name="serial3">
  <link name="l0"/><link name="l1"/><link name="l2"/><link name="l3"/>
  <joint name="a" type="revolute"><origin xyz="0 0 0.1"/><parent link="l0"/><child link="l1"/><axis xyz="0 0 1"/></joint>
  <joint name="b" type="revolute"><origin xyz="0 0 0.4" rpy="0.1 0 0"/><parent link="l1"/><child link="l2"/><axis xyz="0 1 0"/></joint>
  <joint name="c" type="revolute"><origin xyz="0.3 0 0"/><parent link="l2"/><child link="l3"/><axis xyz="1 0 0"/></joint>
</robot>
"#;
