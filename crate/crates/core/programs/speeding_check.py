def speeding_check(speed):
  if speed > 120:
    return "You are fined for $200"
  elif speed > 100:
    return "You are fined for $100"
  else:
    return "All good, race ahead"
      
print(speeding_check(88))
print(speeding_check(110))
print(speeding_check(130))
